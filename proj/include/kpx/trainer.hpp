#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kpx/data.hpp"
#include "kpx/model.hpp"

namespace kpx::trainer {

/// Full run configuration; serializes to a canonical JSON document.
struct RunConfig {
  std::string variant = "komplexnet";
  int timesteps = 15;
  double epsilon = 0.2;
  double eta = 0.006;
  double eta_fb_l1 = 0.005, eta_fb_l2 = 0.004, eta_fb_l3 = 0.004;
  int lateral_kernel = 13;
  int fb_kernel = 5;
  std::vector<int> feedback_layers{1, 2, 3};
  double tau = 1.0;
  double lr = 1e-3;
  int batch = 128;
  int epochs = 30;
  std::uint64_t seed = 1;
  bool freeze_lateral_kernel = false;
  int eval_timesteps = 0;  // 0 -> same as timesteps

  model::NetworkConfig network() const;
  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
  /// Named presets embedding the tuned hyperparameter table.
  static RunConfig preset(const std::string& name);
};

struct AdamState {
  Tensor m, v;
};

/// Standard bias-corrected Adam update, t >= 1.
void adam_step(Tensor& param, const Tensor& grad, AdamState& state, double lr,
               double beta1, double beta2, double eps, std::int64_t t);

struct Checkpoint {
  RunConfig config;
  model::Params params;
  std::map<std::string, AdamState> moments;
  int epoch = 0;
  std::int64_t step = 0;  // Adam timestep counter
};

/// "KPXCKPT1" container: JSON header (config + tensor directory), raw f64
/// little-endian payload, CRC32 trailer. load(save(x)) is bit-identical.
void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct MetricsRow {
  std::string protocol;
  int timestep = 0;
  double accuracy = 0.0;
  double cs_loss = 0.0;  // NaN when the variant has no phases
  int epoch = 0;
};

void write_metrics_csv(const std::string& path,
                       const std::vector<MetricsRow>& rows);

struct TrainResult {
  Checkpoint best;          // best validation accuracy at the final timestep
  Checkpoint last;
  std::vector<MetricsRow> metrics;  // per-epoch train/val rows
  std::vector<double> train_loss;   // per-epoch mean total loss
};

/// Adam training under the accumulated-BCE + tau * synchrony objective.
/// Per epoch this appends one "train" row and one row per validation
/// protocol (default just "val") at the final timestep; with
/// `per_timestep_val` it instead appends one "val" row per timestep.
TrainResult train(const RunConfig& cfg, const data::Dataset& train_set,
                  const data::Dataset& val_set, bool per_timestep_val = false);

/// Mean accuracy / cs_loss per timestep for one dataset.
std::vector<MetricsRow> evaluate(const Checkpoint& ckpt,
                                 const std::string& protocol,
                                 const data::Dataset& test_set,
                                 int eval_timesteps = 0);

/// Batch-mean loss and parameter gradients at the current parameters.
struct BatchGrads {
  double loss = 0.0;
  double accuracy = 0.0;
  double cs = 0.0;
  std::map<std::string, Tensor> grads;
};
BatchGrads batch_gradients(const model::Params& params,
                           const model::NetworkConfig& net, double tau,
                           const data::Dataset& ds,
                           const std::vector<int>& indices, std::uint64_t seed,
                           std::uint64_t phase_epoch);

}  // namespace kpx::trainer
