#include "kpx/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "kpx/data.hpp"
#include "kpx/render.hpp"
#include "kpx/trainer.hpp"

namespace kpx::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void write_manifest(const std::string& path, const std::string& command,
                    const std::string& config_text, std::uint64_t seed,
                    const std::vector<std::string>& artifacts) {
  json j{{"command", command},
         {"config_hash",
          data::crc32(reinterpret_cast<const std::uint8_t*>(config_text.data()),
                      config_text.size())},
         {"seed", seed},
         {"artifacts", artifacts}};
  std::ofstream out(path);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out << j.dump(2) << "\n";
}

data::DigitPool make_pool(const std::string& mnist_images,
                          const std::string& mnist_labels, int glyphs_per_class,
                          const std::string& split, std::uint64_t seed) {
  if (!mnist_images.empty() || !mnist_labels.empty()) {
    if (mnist_images.empty() || mnist_labels.empty())
      throw ContractError("both --mnist-images and --mnist-labels are required");
    return data::load_mnist_idx(mnist_images, mnist_labels);
  }
  return data::make_glyph_pool(glyphs_per_class, split, seed);
}

trainer::RunConfig load_config(const std::string& preset,
                               const std::string& config_path) {
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw FormatError(config_path + ": cannot open");
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    return trainer::RunConfig::from_json(text);
  }
  return trainer::RunConfig::preset(preset.empty() ? "komplexnet" : preset);
}

struct SeedStats {
  std::vector<double> acc_sum, acc_sq, cs_sum, cs_sq;
  int n = 0;
  void add(const std::vector<trainer::MetricsRow>& rows) {
    if (acc_sum.empty()) {
      acc_sum.assign(rows.size(), 0.0);
      acc_sq.assign(rows.size(), 0.0);
      cs_sum.assign(rows.size(), 0.0);
      cs_sq.assign(rows.size(), 0.0);
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      acc_sum[i] += rows[i].accuracy;
      acc_sq[i] += rows[i].accuracy * rows[i].accuracy;
      cs_sum[i] += rows[i].cs_loss;
      cs_sq[i] += rows[i].cs_loss * rows[i].cs_loss;
    }
    ++n;
  }
};

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"KomplexNet: Kuramoto-synchronized complex-valued classifier"};
  app.require_subcommand(1);

  // ---- generate ----
  auto* gen = app.add_subcommand("generate", "Synthesize a multi-digit dataset");
  int gen_digits = 2, gen_n = 1000, gen_glyphs = 300;
  double gen_overlap = 0.0, gen_noise = 0.0;
  std::uint64_t gen_seed = 1;
  std::string gen_out, gen_split = "train", gen_mnist_imgs, gen_mnist_labs;
  gen->add_option("--n-digits", gen_digits, "Digits per scene (2-9)");
  gen->add_option("--max-overlap", gen_overlap, "Max pairwise active-pixel overlap");
  gen->add_option("--n", gen_n, "Number of scenes");
  gen->add_option("--seed", gen_seed, "Generation seed");
  gen->add_option("--out", gen_out, "Output .kpx container")->required();
  gen->add_option("--split", gen_split, "Pool split tag (train/val/test)");
  gen->add_option("--noise-sigma", gen_noise, "Additive Gaussian noise sigma");
  gen->add_option("--mnist-images", gen_mnist_imgs, "IDX image file (optional)");
  gen->add_option("--mnist-labels", gen_mnist_labs, "IDX label file (optional)");
  gen->add_option("--glyphs-per-class", gen_glyphs,
                  "Synthetic pool size per class when no IDX files are given");

  // ---- train ----
  auto* tr = app.add_subcommand("train", "Train a variant");
  std::string tr_preset, tr_config, tr_data, tr_val, tr_out, tr_metrics;
  int tr_epochs = -1, tr_batch = -1, tr_timesteps = -1;
  double tr_tau = std::nan(""), tr_lr = std::nan("");
  std::uint64_t tr_seed = 0;
  bool tr_has_seed = false, tr_per_t = false;
  tr->add_option("--preset", tr_preset,
                 "komplexnet | komplexnet_fb | frozen_gaussian | real | "
                 "random_phase | ideal_phase");
  tr->add_option("--config", tr_config, "RunConfig JSON file");
  tr->add_option("--data", tr_data, "Training .kpx container")->required();
  tr->add_option("--val", tr_val, "Validation .kpx container")->required();
  tr->add_option("--out", tr_out, "Best-validation checkpoint path")->required();
  tr->add_option("--metrics", tr_metrics, "Metrics CSV path");
  tr->add_option("--epochs", tr_epochs, "Override epochs");
  tr->add_option("--batch", tr_batch, "Override batch size");
  tr->add_option("--timesteps", tr_timesteps, "Override unrolled timesteps");
  tr->add_option("--tau", tr_tau, "Override synchrony-loss weight");
  tr->add_option("--lr", tr_lr, "Override learning rate");
  tr->add_option("--seed", tr_seed, "Override seed")->each([&](const std::string&) {
    tr_has_seed = true;
  });
  tr->add_flag("--per-timestep-val", tr_per_t,
               "Log one validation row per timestep");

  // ---- eval ----
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ev_ckpt, ev_csv;
  std::vector<std::string> ev_sets;
  int ev_timesteps = 0;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint path")->required();
  ev->add_option("--set", ev_sets, "protocol=path (repeatable)")->required();
  ev->add_option("--out-csv", ev_csv, "Output CSV path")->required();
  ev->add_option("--eval-timesteps", ev_timesteps,
                 "Evaluate with more timesteps than training");

  // ---- render ----
  auto* rd = app.add_subcommand("render", "Render phase maps for one sample");
  std::string rd_ckpt, rd_data, rd_outdir;
  int rd_index = 0;
  rd->add_option("--checkpoint", rd_ckpt, "Checkpoint path")->required();
  rd->add_option("--data", rd_data, "Dataset .kpx container")->required();
  rd->add_option("--sample-index", rd_index, "Sample index");
  rd->add_option("--out-dir", rd_outdir, "Output directory")->required();

  // ---- sweep ----
  auto* sw = app.add_subcommand("sweep", "Train k seeds and aggregate");
  std::string sw_preset, sw_config, sw_data, sw_val, sw_csv;
  int sw_seeds = 3;
  std::uint64_t sw_base = 1;
  sw->add_option("--preset", sw_preset, "Variant preset");
  sw->add_option("--config", sw_config, "RunConfig JSON file");
  sw->add_option("--data", sw_data, "Training .kpx container")->required();
  sw->add_option("--val", sw_val, "Validation/test .kpx container")->required();
  sw->add_option("--seeds", sw_seeds, "Number of seeds");
  sw->add_option("--seed-base", sw_base, "First seed value");
  sw->add_option("--out-csv", sw_csv, "Aggregated CSV path")->required();

  std::vector<const char*> argv;
  argv.push_back("kpx");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(gen)) {
      data::DigitPool pool =
          make_pool(gen_mnist_imgs, gen_mnist_labs, gen_glyphs, gen_split, gen_seed);
      data::DatasetSpec spec{gen_digits, gen_overlap, gen_n,
                             gen_split,  gen_seed,    gen_noise};
      data::Dataset ds = data::generate_dataset(pool, spec);
      data::save_dataset(ds, gen_out);
      json cfg{{"n_digits", gen_digits}, {"max_overlap", gen_overlap},
               {"n", gen_n},             {"seed", gen_seed},
               {"split", gen_split},     {"noise_sigma", gen_noise}};
      write_manifest(gen_out + ".manifest.json", "generate", cfg.dump(),
                     gen_seed, {gen_out});
      std::cout << "wrote " << gen_out << " (" << ds.samples.size()
                << " samples)\n";
      return 0;
    }

    if (app.got_subcommand(tr)) {
      trainer::RunConfig cfg = load_config(tr_preset, tr_config);
      if (tr_epochs > 0) cfg.epochs = tr_epochs;
      if (tr_batch > 0) cfg.batch = tr_batch;
      if (tr_timesteps > 0) cfg.timesteps = tr_timesteps;
      if (!std::isnan(tr_tau)) cfg.tau = tr_tau;
      if (!std::isnan(tr_lr)) cfg.lr = tr_lr;
      if (tr_has_seed) cfg.seed = tr_seed;
      data::Dataset train_set = data::load_dataset(tr_data);
      data::Dataset val_set = data::load_dataset(tr_val);
      trainer::TrainResult res = trainer::train(cfg, train_set, val_set, tr_per_t);
      trainer::save_checkpoint(res.best, tr_out);
      std::vector<std::string> artifacts{tr_out};
      if (!tr_metrics.empty()) {
        trainer::write_metrics_csv(tr_metrics, res.metrics);
        artifacts.push_back(tr_metrics);
      }
      write_manifest(tr_out + ".manifest.json", "train", cfg.to_json(), cfg.seed,
                     artifacts);
      std::cout << "best-val checkpoint at epoch " << res.best.epoch << " -> "
                << tr_out << "\n";
      return 0;
    }

    if (app.got_subcommand(ev)) {
      trainer::Checkpoint ckpt = trainer::load_checkpoint(ev_ckpt);
      std::vector<trainer::MetricsRow> rows;
      for (const auto& s : ev_sets) {
        const auto pos = s.find('=');
        if (pos == std::string::npos)
          throw ContractError("--set expects protocol=path, got " + s);
        const std::string protocol = s.substr(0, pos);
        data::Dataset ds = data::load_dataset(s.substr(pos + 1));
        std::vector<trainer::MetricsRow> r =
            trainer::evaluate(ckpt, protocol, ds, ev_timesteps);
        rows.insert(rows.end(), r.begin(), r.end());
      }
      trainer::write_metrics_csv(ev_csv, rows);
      write_manifest(ev_csv + ".manifest.json", "eval",
                     ckpt.config.to_json() + std::to_string(ev_timesteps),
                     ckpt.config.seed, {ev_csv});
      std::cout << "wrote " << ev_csv << " (" << rows.size() << " rows)\n";
      return 0;
    }

    if (app.got_subcommand(rd)) {
      trainer::Checkpoint ckpt = trainer::load_checkpoint(rd_ckpt);
      data::Dataset ds = data::load_dataset(rd_data);
      if (rd_index < 0 || rd_index >= static_cast<int>(ds.samples.size()))
        throw ContractError("--sample-index out of range");
      const data::SceneSample& sample =
          ds.samples[static_cast<std::size_t>(rd_index)];
      model::NetworkConfig net = ckpt.config.network();
      if (net.variant == model::Variant::kReal)
        throw ContractError("render: the real baseline has no phases");
      Rng rng = Rng::stream(ckpt.config.seed, rng_tag::kEvalPhase,
                            static_cast<std::uint64_t>(rd_index));
      model::ForwardTrace trace =
          model::forward(sample.image, ckpt.params, net, rng, &sample.masks);
      fs::create_directories(rd_outdir);
      const Tensor& phases = trace.l0_phase.back();
      const Tensor& amps = trace.l0_amp.back();
      std::vector<std::string> artifacts = render::render_phase_map(
          phases, amps, rd_outdir + "/phase_");
      const std::string polar = rd_outdir + "/polar.ppm";
      render::render_polar_histogram(phases, amps, &sample.masks, polar);
      artifacts.push_back(polar);
      write_manifest(rd_outdir + "/manifest.json", "render",
                     ckpt.config.to_json() + std::to_string(rd_index),
                     ckpt.config.seed, artifacts);
      std::cout << "wrote " << artifacts.size() << " images to " << rd_outdir
                << "\n";
      return 0;
    }

    if (app.got_subcommand(sw)) {
      trainer::RunConfig base = load_config(sw_preset, sw_config);
      data::Dataset train_set = data::load_dataset(sw_data);
      data::Dataset val_set = data::load_dataset(sw_val);
      SeedStats stats;
      for (int s = 0; s < sw_seeds; ++s) {
        trainer::RunConfig cfg = base;
        cfg.seed = sw_base + static_cast<std::uint64_t>(s);
        trainer::TrainResult res = trainer::train(cfg, train_set, val_set);
        stats.add(trainer::evaluate(res.best, "in_distribution", val_set));
      }
      std::ofstream out(sw_csv);
      if (!out) throw FormatError(sw_csv + ": cannot open for writing");
      out << "protocol,timestep,acc_mean,acc_std,cs_mean,cs_std\n";
      char buf[200];
      for (std::size_t t = 0; t < stats.acc_sum.size(); ++t) {
        const double n = stats.n;
        const double am = stats.acc_sum[t] / n;
        const double as = std::sqrt(std::max(0.0, stats.acc_sq[t] / n - am * am));
        const double cm = stats.cs_sum[t] / n;
        const double cs = std::sqrt(std::max(0.0, stats.cs_sq[t] / n - cm * cm));
        std::snprintf(buf, sizeof(buf), "in_distribution,%zu,%.17g,%.17g,%.17g,%.17g\n",
                      t, am, as, cm, cs);
        out << buf;
      }
      write_manifest(sw_csv + ".manifest.json", "sweep",
                     base.to_json() + std::to_string(sw_seeds), sw_base,
                     {sw_csv});
      std::cout << "wrote " << sw_csv << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace kpx::cli
