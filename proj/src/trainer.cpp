#include "kpx/trainer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "kpx/threading.hpp"

namespace kpx::trainer {

using nlohmann::json;

model::NetworkConfig RunConfig::network() const {
  model::NetworkConfig net;
  net.variant = model::variant_from_string(variant);
  net.timesteps = timesteps;
  net.epsilon = epsilon;
  net.eta = eta;
  net.eta_fb = {eta_fb_l1, eta_fb_l2, eta_fb_l3};
  net.lateral_kernel = lateral_kernel;
  net.fb_kernel = fb_kernel;
  net.feedback_layers = feedback_layers;
  return net;
}

std::string RunConfig::to_json() const {
  json j{{"variant", variant},
         {"timesteps", timesteps},
         {"epsilon", epsilon},
         {"eta", eta},
         {"eta_fb_l1", eta_fb_l1},
         {"eta_fb_l2", eta_fb_l2},
         {"eta_fb_l3", eta_fb_l3},
         {"lateral_kernel", lateral_kernel},
         {"fb_kernel", fb_kernel},
         {"feedback_layers", feedback_layers},
         {"tau", tau},
         {"lr", lr},
         {"batch", batch},
         {"epochs", epochs},
         {"seed", seed},
         {"freeze_lateral_kernel", freeze_lateral_kernel},
         {"eval_timesteps", eval_timesteps}};
  return j.dump();
}

RunConfig RunConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("RunConfig: bad JSON: ") + e.what());
  }
  RunConfig c;
  c.variant = j.value("variant", c.variant);
  c.timesteps = j.value("timesteps", c.timesteps);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.eta = j.value("eta", c.eta);
  c.eta_fb_l1 = j.value("eta_fb_l1", c.eta_fb_l1);
  c.eta_fb_l2 = j.value("eta_fb_l2", c.eta_fb_l2);
  c.eta_fb_l3 = j.value("eta_fb_l3", c.eta_fb_l3);
  c.lateral_kernel = j.value("lateral_kernel", c.lateral_kernel);
  c.fb_kernel = j.value("fb_kernel", c.fb_kernel);
  if (j.contains("feedback_layers"))
    c.feedback_layers = j.at("feedback_layers").get<std::vector<int>>();
  c.tau = j.value("tau", c.tau);
  c.lr = j.value("lr", c.lr);
  c.batch = j.value("batch", c.batch);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.freeze_lateral_kernel = j.value("freeze_lateral_kernel", c.freeze_lateral_kernel);
  c.eval_timesteps = j.value("eval_timesteps", c.eval_timesteps);
  return c;
}

RunConfig RunConfig::preset(const std::string& name) {
  RunConfig c;
  c.variant = name;
  if (name == "komplexnet") {
    c.epsilon = 0.2;
    c.eta = 0.006;
  } else if (name == "komplexnet_fb") {
    c.epsilon = 0.2;
    c.eta = 0.009;
    c.eta_fb_l1 = 0.005;
    c.eta_fb_l2 = 0.004;
    c.eta_fb_l3 = 0.004;
  } else if (name == "frozen_gaussian") {
    c.epsilon = 0.2;
    c.eta = 0.006;
    c.freeze_lateral_kernel = true;
  } else if (name == "real" || name == "random_phase" || name == "ideal_phase") {
    c.timesteps = 1;
    c.tau = 0.0;  // no phase objective reaches the parameters
  } else {
    throw ContractError("unknown preset: " + name);
  }
  return c;
}

void adam_step(Tensor& param, const Tensor& grad, AdamState& state, double lr,
               double beta1, double beta2, double eps, std::int64_t t) {
  if (!param.same_shape(grad))
    throw ShapeError("adam_step: grad shape mismatch");
  if (t < 1) throw ContractError("adam_step: timestep must be >= 1");
  if (state.m.empty()) state.m = Tensor(param.shape());
  if (state.v.empty()) state.v = Tensor(param.shape());
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

// ---------------------------------------------------------------------------
// checkpoint container
// ---------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'K', 'P', 'X', 'C', 'K', 'P', 'T', '1'};

void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

std::uint32_t get_u32_le(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
         (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

void put_f64(std::vector<std::uint8_t>& out, const Tensor& t) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint64_t u;
    const double d = t[i];
    std::memcpy(&u, &d, 8);
    for (int b = 0; b < 8; ++b) out.push_back(std::uint8_t(u >> (8 * b)));
  }
}

Tensor get_f64(const std::uint8_t* p, std::vector<int> shape) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint64_t u = 0;
    for (int b = 0; b < 8; ++b)
      u |= std::uint64_t(p[i * 8 + static_cast<std::size_t>(b)]) << (8 * b);
    double d;
    std::memcpy(&d, &u, 8);
    t[i] = d;
  }
  return t;
}

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  json dir = json::array();
  std::vector<const Tensor*> payload;
  for (const auto& [name, t] : c.params.tensors) {
    dir.push_back(json{{"name", name}, {"shape", t.shape()}, {"kind", "param"}});
    payload.push_back(&t);
  }
  for (const auto& [name, st] : c.moments) {
    if (st.m.empty()) continue;
    dir.push_back(json{{"name", name}, {"shape", st.m.shape()}, {"kind", "adam_m"}});
    payload.push_back(&st.m);
    dir.push_back(json{{"name", name}, {"shape", st.v.shape()}, {"kind", "adam_v"}});
    payload.push_back(&st.v);
  }
  std::vector<std::string> trainable(c.params.trainable.begin(),
                                     c.params.trainable.end());
  json header{{"format", "KPXCKPT1"},
              {"version", 1},
              {"config", json::parse(c.config.to_json())},
              {"epoch", c.epoch},
              {"step", c.step},
              {"trainable", trainable},
              {"tensors", dir}};
  const std::string htext = header.dump();

  std::vector<std::uint8_t> bytes;
  bytes.insert(bytes.end(), kCkptMagic, kCkptMagic + 8);
  put_u32_le(bytes, static_cast<std::uint32_t>(htext.size()));
  bytes.insert(bytes.end(), htext.begin(), htext.end());
  for (const Tensor* t : payload) put_f64(bytes, *t);
  put_u32_le(bytes, data::crc32(bytes.data(), bytes.size()));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(path + ": write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 16) throw FormatError(path + ": file too short");
  if (std::memcmp(bytes.data(), kCkptMagic, 8) != 0)
    throw FormatError(path + ": bad magic at byte 0");
  if (data::crc32(bytes.data(), bytes.size() - 4) !=
      get_u32_le(bytes.data() + bytes.size() - 4))
    throw FormatError(path + ": checksum mismatch");
  const std::uint32_t hlen = get_u32_le(bytes.data() + 8);
  if (12 + hlen + 4 > bytes.size())
    throw FormatError(path + ": header length exceeds file size");
  json header;
  try {
    header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + hlen);
  } catch (const json::exception& e) {
    throw FormatError(path + ": bad header JSON: " + e.what());
  }
  if (header.value("format", "") != "KPXCKPT1")
    throw FormatError(path + ": unknown format tag");

  Checkpoint c;
  c.config = RunConfig::from_json(header.at("config").dump());
  c.epoch = header.at("epoch").get<int>();
  c.step = header.at("step").get<std::int64_t>();
  std::size_t off = 12 + hlen;
  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    std::size_t n = 1;
    for (int e : shape) n *= static_cast<std::size_t>(e);
    if (off + n * 8 + 4 > bytes.size())
      throw FormatError(path + ": payload truncated at tensor " + name);
    Tensor t = get_f64(bytes.data() + off, shape);
    off += n * 8;
    const std::string kind = entry.at("kind").get<std::string>();
    if (kind == "param")
      c.params.tensors[name] = std::move(t);
    else if (kind == "adam_m")
      c.moments[name].m = std::move(t);
    else if (kind == "adam_v")
      c.moments[name].v = std::move(t);
    else
      throw FormatError(path + ": unknown tensor kind " + kind);
  }
  if (off + 4 != bytes.size())
    throw FormatError(path + ": payload size mismatch");
  for (const auto& name : header.at("trainable"))
    c.params.trainable.insert(name.get<std::string>());
  return c;
}

void write_metrics_csv(const std::string& path,
                       const std::vector<MetricsRow>& rows) {
  std::ofstream out(path);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out << "protocol,timestep,accuracy,cs_loss,epoch\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%.17g,%.17g,%d\n",
                  r.protocol.c_str(), r.timestep, r.accuracy, r.cs_loss,
                  r.epoch);
    out << buf;
  }
}

// ---------------------------------------------------------------------------
// forward/backward
// ---------------------------------------------------------------------------

namespace {

Tensor initial_phase_for(const model::NetworkConfig& net,
                         const data::SceneSample& sample, std::uint64_t seed,
                         std::uint64_t epoch_or_tag, std::uint64_t index,
                         bool eval_mode) {
  const std::uint64_t tag =
      eval_mode ? rng_tag::kEvalPhase : rng_tag::kPhaseInit;
  Rng rng = Rng::stream(seed, tag, epoch_or_tag, index);
  if (net.variant == model::Variant::kReal) return Tensor();
  if (net.variant == model::Variant::kIdealPhase)
    return model::ideal_phase_assignment(sample.masks, net, rng);
  return model::sample_phase_field(net, rng);
}

struct SampleEval {
  std::vector<double> accuracy;  // per timestep
  std::vector<double> cs;        // per timestep (NaN for real)
  double loss = 0.0;
};

SampleEval eval_trace_metrics(const model::ForwardTrace& tr,
                              const data::SceneSample& sample, double tau) {
  SampleEval ev;
  const int n = static_cast<int>(std::lround(sample.label.sum()));
  for (int t = 0; t < tr.timesteps(); ++t) {
    ev.accuracy.push_back(static_cast<double>(objectives::topn_set_accuracy(
        tr.logits[static_cast<std::size_t>(t)], sample.label, n)));
    if (tr.l0_phase.empty())
      ev.cs.push_back(std::nan(""));
    else
      ev.cs.push_back(objectives::cs_loss(
          tr.l0_phase[static_cast<std::size_t>(t)], sample.masks));
  }
  std::vector<Tensor> no_phases;
  ev.loss = objectives::total_loss(tr.logits,
                                   tr.l0_phase.empty() ? no_phases : tr.l0_phase,
                                   sample.label,
                                   tr.l0_phase.empty() ? nullptr : &sample.masks,
                                   tr.l0_phase.empty() ? 0.0 : tau);
  return ev;
}

}  // namespace

BatchGrads batch_gradients(const model::Params& params,
                           const model::NetworkConfig& net, double tau,
                           const data::Dataset& ds,
                           const std::vector<int>& indices, std::uint64_t seed,
                           std::uint64_t phase_epoch) {
  const std::size_t n = indices.size();
  std::vector<std::map<std::string, Tensor>> slot_grads(n);
  std::vector<double> slot_loss(n), slot_acc(n), slot_cs(n);

  parallel_for_index(n, [&](std::size_t k) {
    const data::SceneSample& sample =
        ds.samples[static_cast<std::size_t>(indices[k])];
    Tensor init_phase = initial_phase_for(
        net, sample, seed, phase_epoch,
        static_cast<std::uint64_t>(indices[k]), false);

    Tape t;
    model::ParamVars pv = model::register_params(t, params, true);
    model::TraceVars tv = model::forward_t(t, sample.image, pv, net, init_phase);

    Var loss = t.bce_with_logits(tv.logits[0], sample.label);
    for (std::size_t s = 1; s < tv.logits.size(); ++s)
      loss = t.add(loss, t.bce_with_logits(tv.logits[s], sample.label));
    const bool has_phases = !tv.l0_phase.empty();
    if (has_phases && tau != 0.0)
      loss = t.add(loss, t.scale(objectives::cs_loss_t(t, tv.l0_phase.back(),
                                                       sample.masks),
                                 tau));
    t.backward(loss);

    slot_loss[k] = t.value(loss)[0];
    const int nlab = static_cast<int>(std::lround(sample.label.sum()));
    slot_acc[k] = objectives::topn_set_accuracy(t.value(tv.logits.back()),
                                                sample.label, nlab);
    slot_cs[k] = has_phases
                     ? objectives::cs_loss(t.value(tv.l0_phase.back()),
                                           sample.masks)
                     : std::nan("");
    for (const auto& name : params.trainable) {
      const Tensor* g = t.grad(pv.get(name));
      slot_grads[k][name] = g ? *g : Tensor(params.get(name).shape());
    }
  });

  BatchGrads out;
  for (const auto& name : params.trainable)
    out.grads[name] = Tensor(params.get(name).shape());
  double cs_sum = 0.0;
  int cs_n = 0;
  for (std::size_t k = 0; k < n; ++k) {  // fixed order: thread-count invariant
    out.loss += slot_loss[k];
    out.accuracy += slot_acc[k];
    if (!std::isnan(slot_cs[k])) {
      cs_sum += slot_cs[k];
      ++cs_n;
    }
    for (auto& [name, g] : slot_grads[k]) out.grads[name].add_scaled(g, 1.0);
  }
  const double dn = static_cast<double>(n);
  out.loss /= dn;
  out.accuracy /= dn;
  out.cs = cs_n > 0 ? cs_sum / cs_n : std::nan("");
  for (auto& [name, g] : out.grads)
    for (std::size_t i = 0; i < g.size(); ++i) g[i] /= dn;
  return out;
}

namespace {

struct EvalSummary {
  std::vector<double> accuracy, cs;  // per timestep
};

EvalSummary eval_dataset(const model::Params& params,
                         const model::NetworkConfig& net, double tau,
                         const data::Dataset& ds, std::uint64_t seed) {
  const std::size_t n = ds.samples.size();
  if (n == 0) throw ContractError("evaluate: empty dataset");
  std::vector<SampleEval> slots(n);
  parallel_for_index(n, [&](std::size_t i) {
    const data::SceneSample& sample = ds.samples[i];
    Tensor init_phase = initial_phase_for(net, sample, seed, 0, i, true);
    Tape t;
    model::ParamVars pv = model::register_params(t, params, false);
    model::TraceVars tv = model::forward_t(t, sample.image, pv, net, init_phase);
    model::ForwardTrace tr;
    for (Var v : tv.logits) tr.logits.push_back(t.value(v));
    for (Var v : tv.l0_phase) tr.l0_phase.push_back(t.value(v));
    slots[i] = eval_trace_metrics(tr, sample, tau);
  });
  EvalSummary sum;
  const std::size_t steps = slots[0].accuracy.size();
  sum.accuracy.assign(steps, 0.0);
  sum.cs.assign(steps, 0.0);
  bool has_cs = !std::isnan(slots[0].cs[0]);
  for (const auto& ev : slots)
    for (std::size_t t = 0; t < steps; ++t) {
      sum.accuracy[t] += ev.accuracy[t];
      if (has_cs) sum.cs[t] += ev.cs[t];
    }
  for (std::size_t t = 0; t < steps; ++t) {
    sum.accuracy[t] /= static_cast<double>(n);
    sum.cs[t] = has_cs ? sum.cs[t] / static_cast<double>(n) : std::nan("");
  }
  return sum;
}

}  // namespace

std::vector<MetricsRow> evaluate(const Checkpoint& ckpt,
                                 const std::string& protocol,
                                 const data::Dataset& test_set,
                                 int eval_timesteps) {
  model::NetworkConfig net = ckpt.config.network();
  if (eval_timesteps > 0)
    net.timesteps = eval_timesteps;
  else if (ckpt.config.eval_timesteps > 0)
    net.timesteps = ckpt.config.eval_timesteps;
  EvalSummary sum = eval_dataset(ckpt.params, net, ckpt.config.tau, test_set,
                                 ckpt.config.seed);
  std::vector<MetricsRow> rows;
  for (std::size_t t = 0; t < sum.accuracy.size(); ++t)
    rows.push_back(MetricsRow{protocol, static_cast<int>(t), sum.accuracy[t],
                              sum.cs[t], ckpt.epoch});
  return rows;
}

TrainResult train(const RunConfig& cfg, const data::Dataset& train_set,
                  const data::Dataset& val_set, bool per_timestep_val) {
  if (train_set.samples.empty() || val_set.samples.empty())
    throw ContractError("train: datasets must be non-empty");
  model::NetworkConfig net = cfg.network();
  model::Params params = model::init_params(net, cfg.seed);
  std::map<std::string, AdamState> moments;
  std::int64_t step = 0;

  TrainResult result;
  double best_acc = -1.0;

  const int n = static_cast<int>(train_set.samples.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // deterministic shuffle
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng shuffle_rng = Rng::stream(cfg.seed, rng_tag::kShuffle,
                                  static_cast<std::uint64_t>(epoch));
    for (int i = n - 1; i > 0; --i) {
      const int j = shuffle_rng.uniform_int(i + 1);
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(j)]);
    }

    double epoch_loss = 0.0, epoch_acc = 0.0, epoch_cs = 0.0;
    int batches = 0, cs_batches = 0;
    for (int start = 0; start < n; start += cfg.batch) {
      const int end = std::min(n, start + cfg.batch);
      std::vector<int> batch_idx(order.begin() + start, order.begin() + end);
      BatchGrads bg =
          batch_gradients(params, net, cfg.tau, train_set, batch_idx, cfg.seed,
                          static_cast<std::uint64_t>(epoch));
      if (!std::isfinite(bg.loss)) {
        std::ostringstream msg;
        msg << "train: non-finite loss at epoch " << epoch << ", batch "
            << batches;
        for (const auto& [name, t] : params.tensors)
          msg << "; |" << name << "| = " << t.max_abs();
        throw ContractError(msg.str());
      }
      ++step;
      for (const auto& name : params.trainable)
        adam_step(params.get(name), bg.grads.at(name), moments[name], cfg.lr,
                  0.9, 0.999, 1e-8, step);
      epoch_loss += bg.loss;
      epoch_acc += bg.accuracy;
      if (!std::isnan(bg.cs)) {
        epoch_cs += bg.cs;
        ++cs_batches;
      }
      ++batches;
    }
    epoch_loss /= batches;
    epoch_acc /= batches;
    const double train_cs =
        cs_batches > 0 ? epoch_cs / cs_batches : std::nan("");
    result.train_loss.push_back(epoch_loss);
    result.metrics.push_back(MetricsRow{"train", net.timesteps - 1, epoch_acc,
                                        train_cs, epoch});

    EvalSummary val = eval_dataset(params, net, cfg.tau, val_set, cfg.seed);
    const double final_acc = val.accuracy.back();
    if (per_timestep_val) {
      for (std::size_t t = 0; t < val.accuracy.size(); ++t)
        result.metrics.push_back(MetricsRow{"val", static_cast<int>(t),
                                            val.accuracy[t], val.cs[t], epoch});
    } else {
      result.metrics.push_back(MetricsRow{"val", net.timesteps - 1, final_acc,
                                          val.cs.back(), epoch});
    }

    Checkpoint current;
    current.config = cfg;
    current.params = params;
    current.moments = moments;
    current.epoch = epoch + 1;
    current.step = step;
    if (final_acc > best_acc) {
      best_acc = final_acc;
      result.best = current;
    }
    result.last = std::move(current);
  }
  return result;
}

}  // namespace kpx::trainer
