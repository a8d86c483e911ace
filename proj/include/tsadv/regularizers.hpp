#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "tsadv/error.hpp"
#include "tsadv/loss.hpp"
#include "tsadv/model.hpp"
#include "tsadv/tape.hpp"

namespace tsadv {

enum class RegularizerKind { kNone, kL1, kL2, kAsl0 };

inline const char* regularizer_name(RegularizerKind k) {
  switch (k) {
    case RegularizerKind::kNone: return "none";
    case RegularizerKind::kL1: return "l1";
    case RegularizerKind::kL2: return "l2";
    case RegularizerKind::kAsl0: return "asl0";
  }
  return "?";
}

inline RegularizerKind parse_regularizer(const std::string& s) {
  if (s == "none") return RegularizerKind::kNone;
  if (s == "l1") return RegularizerKind::kL1;
  if (s == "l2") return RegularizerKind::kL2;
  if (s == "asl0") return RegularizerKind::kAsl0;
  throw ConfigError("unknown regularizer: " + s);
}

struct Regularizer {
  RegularizerKind kind = RegularizerKind::kNone;
  double lambda = 1e-5;
};

/// Smooth L0 surrogate: sum_i d_i^2 / (d_i^2 + sigma^2). Each summand
/// lies in [0, 1) and tends to the 0/1 indicator as sigma -> 0.
inline double l0_approx(std::span<const double> delta, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("l0_approx: sigma must be > 0");
  const double s2 = sigma * sigma;
  double acc = 0.0;
  for (double d : delta) {
    double d2 = d * d;
    acc += d2 / (d2 + s2);
  }
  return acc;
}

/// Analytic gradient: d/dd_i = 2 d_i sigma^2 / (d_i^2 + sigma^2)^2.
inline std::vector<double> l0_approx_grad(std::span<const double> delta, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("l0_approx_grad: sigma must be > 0");
  const double s2 = sigma * sigma;
  std::vector<double> g(delta.size());
  for (std::size_t i = 0; i < delta.size(); ++i) {
    double d2 = delta[i] * delta[i];
    double denom = d2 + s2;
    g[i] = 2.0 * delta[i] * s2 / (denom * denom);
  }
  return g;
}

/// Unscaled penalty value; the lambda weighting is applied by the
/// objective, not here.
inline double penalty(RegularizerKind kind, std::span<const double> delta,
                      double sigma) {
  switch (kind) {
    case RegularizerKind::kNone:
      return 0.0;
    case RegularizerKind::kL1: {
      double acc = 0.0;
      for (double d : delta) acc += std::fabs(d);
      return acc;
    }
    case RegularizerKind::kL2: {
      double acc = 0.0;
      for (double d : delta) acc += d * d;
      return acc;
    }
    case RegularizerKind::kAsl0:
      return l0_approx(delta, sigma);
  }
  throw ConfigError("penalty: bad regularizer kind");
}

/// Tape route of the same penalties; the graphs use the same elementwise
/// operations in the same left-to-right order as the value-level
/// functions, so both routes agree bitwise.
inline Tape::NodeId penalty_node(Tape& t, Tape::NodeId delta, RegularizerKind kind,
                                 double sigma) {
  switch (kind) {
    case RegularizerKind::kNone:
      return t.scalar(0.0);
    case RegularizerKind::kL1:
      return t.sum(t.abs(delta));
    case RegularizerKind::kL2:
      return t.sum(t.square(delta));
    case RegularizerKind::kAsl0: {
      if (!(sigma > 0.0)) throw ConfigError("penalty_node: sigma must be > 0");
      auto sq = t.square(delta);
      return t.sum(t.div(sq, t.add_const(sq, sigma * sigma)));
    }
  }
  throw ConfigError("penalty_node: bad regularizer kind");
}

/// Adaptive schedule state for the sigma parameter: decay rate eta_d < 1,
/// increase rate eta_i > 1, objective threshold j_star and the best
/// objective seen. Sigma is clamped to [sigma_min, sigma_max] so the
/// geometric sequence cannot underflow or overflow the penalty gradient;
/// clamp events are counted.
///
/// Attack loops raise sigma_min to the stability floor sqrt(2*alpha*
/// lambda): below it, a fixed-step gradient update on the surrogate is
/// an expansive map around zero (the per-step pull peaks at roughly
/// 0.65*alpha*lambda/sigma), and near-zero coordinates get catapulted
/// back out instead of settling.
struct SigmaController {
  static constexpr double kSigmaMin = 1e-6;
  static constexpr double kSigmaMax = 1e3;

  double sigma = 1.0;
  double eta_d = 0.9;
  double eta_i = 1.1;
  double j_star = 0.0;
  double best_objective = std::numeric_limits<double>::infinity();
  double sigma_min = kSigmaMin;
  double sigma_max = kSigmaMax;
  int clamp_events = 0;

  void validate() const {
    if (!(sigma > 0.0)) throw ConfigError("sigma controller: sigma must be > 0");
    if (!(eta_d < 1.0) || !(eta_d > 0.0))
      throw ConfigError("sigma controller: decay rate eta_d must be in (0, 1)");
    if (!(eta_i > 1.0))
      throw ConfigError("sigma controller: increase rate eta_i must be > 1");
    if (!(sigma_min > 0.0) || !(sigma_min < sigma_max))
      throw ConfigError("sigma controller: need 0 < sigma_min < sigma_max");
  }
};

/// Stability floor for the schedule: once sigma^2 < 2*alpha*lambda, a
/// fixed-step gradient update on the surrogate stops contracting around
/// zero (the per-step pull peaks at about 0.65*alpha*lambda/sigma) and
/// near-zero coordinates are catapulted back out instead of settling.
inline double sigma_stability_floor(double alpha, double lambda) {
  return std::max(SigmaController::kSigmaMin, std::sqrt(2.0 * alpha * lambda));
}

/// One step of the adaptive schedule: decay sigma when the attack
/// progressed and the objective is below j_star, otherwise increase it.
/// Pure: returns the updated controller.
inline SigmaController sigma_update(SigmaController ctrl, bool attack_progressed,
                                    double j) {
  ctrl.validate();
  if (!std::isfinite(j)) throw NumericError("sigma_update: non-finite objective");
  double next = (attack_progressed && j < ctrl.j_star) ? ctrl.eta_d * ctrl.sigma
                                                       : ctrl.eta_i * ctrl.sigma;
  double clamped = std::clamp(next, ctrl.sigma_min, ctrl.sigma_max);
  if (clamped != next) ++ctrl.clamp_events;
  ctrl.sigma = clamped;
  ctrl.best_objective = std::min(ctrl.best_objective, j);
  return ctrl;
}

struct ObjectiveValue {
  double j = 0.0;
  double loss = 0.0;
  double penalty = 0.0;
};

/// Full objective evaluation with the tape kept alive so the caller can
/// run backward and read d(J)/d(delta).
struct ObjectiveEval {
  Tape tape;
  Tape::NodeId delta_node = Tape::kNone;
  Tape::NodeId j_node = Tape::kNone;
  ObjectiveValue value;
  std::vector<double> logits;
  int predicted = -1;
  bool misclassified = false;
};

/// J(delta) = L(f(x + delta), y) + lambda * penalty(delta). When lambda
/// is zero or the regularizer is none, the penalty term is omitted from
/// the graph entirely, so J == L bitwise and the gradient path is
/// identical to the unregularized attack. The penalty component is still
/// reported for logging.
inline ObjectiveEval objective_eval(const Model& model, std::span<const double> x,
                                    int y, std::span<const double> delta,
                                    LossKind loss_kind, double kappa,
                                    const Regularizer& reg, double sigma) {
  if (x.size() != delta.size())
    throw ShapeError("objective: x and delta lengths differ");
  if (y < 0 || static_cast<std::size_t>(y) >= model.num_classes)
    throw ConfigError("objective: label out of range");
  ObjectiveEval ev;
  Tape& t = ev.tape;
  ev.delta_node = t.leaf(NdArray::vec({delta.begin(), delta.end()}));
  auto xn = t.leaf(NdArray::vec({x.begin(), x.end()}));
  auto perturbed = t.add(xn, ev.delta_node);
  auto logits = model.forward(t, perturbed, model.make_leaves(t));
  auto loss = attack_loss_node(t, logits, y, loss_kind, kappa);

  const bool penalized = reg.kind != RegularizerKind::kNone && reg.lambda != 0.0;
  if (penalized) {
    auto pen = penalty_node(t, ev.delta_node, reg.kind, sigma);
    ev.j_node = t.add(loss, t.mul_const(pen, reg.lambda));
    ev.value.penalty = t.value(pen)[0];
  } else {
    ev.j_node = loss;
    ev.value.penalty = penalty(reg.kind, delta, sigma);
  }
  ev.value.loss = t.value(loss)[0];
  ev.value.j = t.value(ev.j_node)[0];
  ev.logits = t.value(logits).data;
  std::size_t best = 0;
  for (std::size_t i = 1; i < ev.logits.size(); ++i)
    if (ev.logits[i] > ev.logits[best]) best = i;
  ev.predicted = static_cast<int>(best);
  ev.misclassified = ev.predicted != y;
  return ev;
}

/// The (J, L, penalty) triple only.
inline ObjectiveValue objective(const Model& model, std::span<const double> x, int y,
                                std::span<const double> delta, const Regularizer& reg,
                                double sigma, LossKind loss_kind, double kappa = 0.0) {
  return objective_eval(model, x, y, delta, loss_kind, kappa, reg, sigma).value;
}

}  // namespace tsadv
