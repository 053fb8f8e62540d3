#include "kpx/objectives.hpp"

#include <algorithm>
#include <cmath>

namespace kpx::objectives {

CircularStats circular_stats(const std::vector<double>& angles) {
  if (angles.empty()) throw ContractError("circular_stats: empty angle list");
  double sx = 0.0, sy = 0.0;
  for (double a : angles) {
    sx += std::cos(a);
    sy += std::sin(a);
  }
  const double r = std::hypot(sx, sy);
  const double n = static_cast<double>(angles.size());
  CircularStats st;
  st.variance = 1.0 - r / n;
  st.degenerate = r <= 1e-12 * n;
  st.mean = st.degenerate ? 0.0 : std::atan2(sy, sx);
  return st;
}

double circular_mean(const std::vector<double>& angles) {
  return circular_stats(angles).mean;
}

double circular_variance(const std::vector<double>& angles) {
  return circular_stats(angles).variance;
}

namespace {

std::vector<std::size_t> group_indices(const Tensor& theta,
                                       const GroupMask& g) {
  const int cn = theta.extent(0), h = theta.extent(1), w = theta.extent(2);
  if (g.height != h || g.width != w)
    throw ShapeError("cs_loss: mask grid does not match the phase field");
  std::vector<std::size_t> idx;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      if (g.mask[static_cast<std::size_t>(i) * w + j])
        for (int c = 0; c < cn; ++c)
          idx.push_back((static_cast<std::size_t>(c) * h + i) * w + j);
  return idx;
}

}  // namespace

double cs_loss(const Tensor& theta_l0, const GroupMasks& masks) {
  Tape t;
  Var th = t.leaf(theta_l0);
  return t.value(cs_loss_t(t, th, masks))[0];
}

Var cs_loss_t(Tape& t, Var theta, const GroupMasks& masks) {
  const Tensor& th = t.value(theta);
  if (th.rank() != 3) throw ShapeError("cs_loss: phases must be [C,H,W]");
  int groups = 0;
  Var var_sum, cx_sum, cy_sum;
  for (const auto& g : masks.groups) {
    if (g.kind != GroupKind::kDigit) continue;  // overlap groups excluded
    std::vector<std::size_t> idx = group_indices(th, g);
    if (idx.empty()) throw ContractError("cs_loss: digit group has no pixels");
    const double n = static_cast<double>(idx.size());
    Var sel = t.gather(theta, std::move(idx));
    Var sx = t.sum(t.cos(sel));
    Var sy = t.sum(t.sin(sel));
    Var r = t.hypot(sx, sy);
    Var v = t.offset(t.scale(r, -1.0 / n), 1.0);  // 1 - r/n
    // unit centroid e^{i<theta>} = (sx, sy) / r
    Var ux = t.unit_cos(sx, sy);
    Var uy = t.unit_sin(sx, sy);
    if (groups == 0) {
      var_sum = v;
      cx_sum = ux;
      cy_sum = uy;
    } else {
      var_sum = t.add(var_sum, v);
      cx_sum = t.add(cx_sum, ux);
      cy_sum = t.add(cy_sum, uy);
    }
    ++groups;
  }
  if (groups == 0) throw ContractError("cs_loss: at least one digit group required");
  const double gn = static_cast<double>(groups);
  Var centroid_sq = t.add(t.mul(cx_sum, cx_sum), t.mul(cy_sum, cy_sum));
  return t.scale(
      t.add(t.scale(var_sum, 1.0 / gn), t.scale(centroid_sq, 1.0 / (2.0 * gn))),
      0.5);
}

double bce(const Tensor& logits, const Tensor& targets) {
  Tape t;
  return t.value(t.bce_with_logits(t.leaf(logits), targets))[0];
}

double total_loss(const std::vector<Tensor>& logits_per_step,
                  const std::vector<Tensor>& phases_per_step, const Tensor& y,
                  const GroupMasks* masks, double tau) {
  if (logits_per_step.empty())
    throw ContractError("total_loss: trace must have at least one timestep");
  double loss = 0.0;
  for (const auto& l : logits_per_step) loss += bce(l, y);
  if (tau != 0.0 && !phases_per_step.empty()) {
    if (masks == nullptr)
      throw ContractError("total_loss: masks required when tau > 0");
    loss += tau * cs_loss(phases_per_step.back(), *masks);
  }
  return loss;
}

int topn_set_accuracy(const Tensor& logits, const Tensor& y, int n) {
  if (!logits.same_shape(y))
    throw ShapeError("topn_set_accuracy: shape mismatch");
  int ones = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] != 0.0 && y[i] != 1.0)
      throw ContractError("topn_set_accuracy: labels must be multi-hot");
    ones += y[i] == 1.0 ? 1 : 0;
  }
  if (ones != n)
    throw ContractError("topn_set_accuracy: label count does not equal N");
  const int k = static_cast<int>(logits.size());
  std::vector<int> order(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) order[static_cast<std::size_t>(i)] = i;
  // stable: ties resolved toward the lower class index
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return logits[static_cast<std::size_t>(a)] > logits[static_cast<std::size_t>(b)];
  });
  for (int i = 0; i < n; ++i)
    if (y[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] != 1.0)
      return 0;
  return 1;
}

}  // namespace kpx::objectives
