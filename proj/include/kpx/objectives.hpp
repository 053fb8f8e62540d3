#pragma once

#include <cstdint>
#include <vector>

#include "kpx/tape.hpp"
#include "kpx/tensor.hpp"

namespace kpx::objectives {

enum class GroupKind : std::uint8_t { kDigit = 0, kOverlap = 1 };

/// Boolean mask over the 32x32 image grid tagging one object group. Overlap
/// groups record the digit-group indices they cover in `parents`.
struct GroupMask {
  GroupKind kind = GroupKind::kDigit;
  std::vector<std::uint8_t> mask;  // h*w entries, 0/1
  int height = 0, width = 0;
  std::vector<int> parents;
  int pixel_count() const {
    int n = 0;
    for (auto v : mask) n += v;
    return n;
  }
};

struct GroupMasks {
  std::vector<GroupMask> groups;
  int digit_count() const {
    int n = 0;
    for (const auto& g : groups) n += g.kind == GroupKind::kDigit ? 1 : 0;
    return n;
  }
};

struct CircularStats {
  double mean = 0.0;      // arg of the resultant; 0 when degenerate
  double variance = 0.0;  // 1 - |resultant| / n
  bool degenerate = false;
};

CircularStats circular_stats(const std::vector<double>& angles);
double circular_mean(const std::vector<double>& angles);
double circular_variance(const std::vector<double>& angles);

/// Cluster synchrony loss over the digit groups of `masks`:
///   0.5 * ( mean_l V_l + |sum_l e^{i<theta>_l}|^2 / (2G) )
/// A group's phase population is all channels at its masked pixels. Overlap
/// groups are excluded. Throws ContractError when no digit group or an empty
/// group is present.
double cs_loss(const Tensor& theta_l0, const GroupMasks& masks);

/// Tape version used inside the training loss; theta is [C,H,W].
Var cs_loss_t(Tape& t, Var theta, const GroupMasks& masks);

/// Mean over classes of stabilized logit-space binary cross-entropy.
double bce(const Tensor& logits, const Tensor& targets);

/// Accumulated BCE over all timesteps plus tau * cs_loss on the final
/// timestep's phases. `phases` may be empty (real baseline); then tau must
/// effectively not apply and masks may be null only if tau == 0 or no phases.
double total_loss(const std::vector<Tensor>& logits_per_step,
                  const std::vector<Tensor>& phases_per_step, const Tensor& y,
                  const GroupMasks* masks, double tau);

/// 1 iff the N largest logits' class set equals the label set, with
/// deterministic tie-break by lower class index. Requires sum(y) == N.
int topn_set_accuracy(const Tensor& logits, const Tensor& y, int n);

}  // namespace kpx::objectives
