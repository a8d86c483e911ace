#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tsadv/error.hpp"
#include "tsadv/loss.hpp"
#include "tsadv/metrics.hpp"
#include "tsadv/model.hpp"
#include "tsadv/regularizers.hpp"

namespace tsadv {

enum class AttackKind { kPgd, kPgdL2, kCw, kCwL2 };

inline const char* attack_kind_name(AttackKind k) {
  switch (k) {
    case AttackKind::kPgd: return "pgd";
    case AttackKind::kPgdL2: return "pgd_l2";
    case AttackKind::kCw: return "cw";
    case AttackKind::kCwL2: return "cw_l2";
  }
  return "?";
}

struct AttackConfig {
  AttackKind kind = AttackKind::kPgd;
  bool adaptive = false;  // adaptive-sigma wrapper around the base attack
  Regularizer regularizer{};
  int iterations = 1000;
  double alpha = 0.01;
  double eps_inf = 0.5;  // pgd
  double eps_2 = 1.0;    // pgd_l2 / cw_l2
  double kappa = 0.0;
  double sigma0 = 1.0;
  double eta_d = 0.9;
  double eta_i = 1.1;
  double epsilon_zero = 1e-6;  // close-to-zero threshold for reporting
  std::optional<std::pair<double, double>> clamp_range;
  bool early_stop = false;
  bool keep_ball = true;  // adaptive variants keep the base projection
  std::uint64_t seed = 0;
};

/// Attack display name such as "pgd" or "as_cw".
inline std::string attack_name(const AttackConfig& cfg) {
  return std::string(cfg.adaptive ? "as_" : "") + attack_kind_name(cfg.kind);
}

/// Parses names like "cw_l2" or "as_pgd" into (kind, adaptive).
inline std::pair<AttackKind, bool> parse_attack(const std::string& name) {
  std::string s = name;
  bool adaptive = false;
  if (s.rfind("as_", 0) == 0) {
    adaptive = true;
    s = s.substr(3);
  }
  if (s == "pgd") return {AttackKind::kPgd, adaptive};
  if (s == "pgd_l2") return {AttackKind::kPgdL2, adaptive};
  if (s == "cw") return {AttackKind::kCw, adaptive};
  if (s == "cw_l2") return {AttackKind::kCwL2, adaptive};
  throw ConfigError("unknown attack: " + name);
}

inline LossKind attack_loss_kind(AttackKind k) {
  return (k == AttackKind::kPgd || k == AttackKind::kPgdL2)
             ? LossKind::kCrossEntropyAscent
             : LossKind::kCwMargin;
}

inline void validate_config(const AttackConfig& cfg) {
  if (cfg.iterations < 1) throw ConfigError("attack: iterations must be >= 1");
  if (!(cfg.alpha > 0)) throw ConfigError("attack: alpha must be > 0");
  if (cfg.kind == AttackKind::kPgd && !(cfg.eps_inf > 0))
    throw ConfigError("attack: eps_inf must be > 0 for pgd");
  if ((cfg.kind == AttackKind::kPgdL2 || cfg.kind == AttackKind::kCwL2) &&
      !(cfg.eps_2 > 0))
    throw ConfigError("attack: eps_2 must be > 0 for the L2-ball attacks");
  if (cfg.kappa < 0) throw ConfigError("attack: kappa must be >= 0");
  if (cfg.regularizer.lambda < 0) throw ConfigError("attack: lambda must be >= 0");
  if (cfg.clamp_range && !(cfg.clamp_range->first <= cfg.clamp_range->second))
    throw ConfigError("attack: clamp range lo must be <= hi");
  if (cfg.adaptive) {
    if (cfg.regularizer.kind != RegularizerKind::kAsl0 &&
        cfg.regularizer.kind != RegularizerKind::kNone)
      throw ConfigError("attack: adaptive variants require the asl0 regularizer "
                        "(none is allowed as the inert mode)");
    SigmaController probe{.sigma = cfg.sigma0, .eta_d = cfg.eta_d, .eta_i = cfg.eta_i};
    probe.validate();
  }
  if (cfg.regularizer.kind == RegularizerKind::kAsl0 && !(cfg.sigma0 > 0))
    throw ConfigError("attack: sigma0 must be > 0 with the asl0 regularizer");
}

struct TraceEntry {
  double j = 0.0;
  double loss = 0.0;
  double penalty = 0.0;
  double sigma = 0.0;    // sigma used for this iteration's step
  bool progressed = false;
};

struct AttackOutcome {
  bool success = false;
  std::vector<double> delta;
  int iterations_used = 0;
  double l2_distance = 0.0;
  int close_to_zero = 0;
  double initial_objective = 0.0;  // J at delta = 0; the j_star anchor
  double final_sigma = 0.0;
  int sigma_clamp_events = 0;
  std::vector<TraceEntry> trace;
};

inline double l2_norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

/// Clamp each coordinate into [-eps, eps]; idempotent.
inline std::vector<double> project_linf(std::vector<double> delta, double eps) {
  if (!(eps > 0)) throw ConfigError("project_linf: radius must be > 0");
  for (auto& v : delta) v = std::clamp(v, -eps, eps);
  return delta;
}

/// Rescale onto the L2 ball when outside it; idempotent.
inline std::vector<double> project_l2(std::vector<double> delta, double eps) {
  if (!(eps > 0)) throw ConfigError("project_l2: radius must be > 0");
  double n = l2_norm(delta);
  if (n > eps) {
    double s = eps / n;
    for (auto& v : delta) v *= s;
  }
  return delta;
}

namespace detail {

inline double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

inline void apply_constraints(std::vector<double>& delta, std::span<const double> x,
                              const AttackConfig& cfg) {
  const bool project = !cfg.adaptive || cfg.keep_ball;
  if (project) {
    switch (cfg.kind) {
      case AttackKind::kPgd:
        delta = project_linf(std::move(delta), cfg.eps_inf);
        break;
      case AttackKind::kPgdL2:
      case AttackKind::kCwL2:
        delta = project_l2(std::move(delta), cfg.eps_2);
        break;
      case AttackKind::kCw:
        break;  // unconstrained
    }
  }
  if (cfg.clamp_range) {
    auto [lo, hi] = *cfg.clamp_range;
    for (std::size_t i = 0; i < delta.size(); ++i)
      delta[i] = std::clamp(x[i] + delta[i], lo, hi) - x[i];
  }
}

}  // namespace detail

/// Shared iterative loop behind every attack. Each iteration descends
/// J = L + lambda * penalty from the current iterate: the PGD family
/// takes sign-gradient steps, the CW family plain gradient steps, then
/// the constraint set is re-applied. The best successful iterate by L2
/// norm is tracked and returned; with none, the final iterate is.
///
/// In adaptive mode the sigma controller runs after every iteration with
/// progressed = "the perturbed input misclassifies, or the attack loss
/// decreased since the previous iteration", j_star anchored to the
/// objective at delta = 0.
///
/// Every run stops early once the iterate moves less than 1e-9 in the
/// max norm for 10 consecutive iterations. The stop is uniform across
/// plain and adaptive loops so the inert adaptive wrapper reproduces the
/// plain attack bit-for-bit, iteration counts included.
inline AttackOutcome run_attack(const Model& model, std::span<const double> x, int y,
                                const AttackConfig& cfg) {
  validate_config(cfg);
  if (x.size() != model.input_length)
    throw ShapeError("attack: sample length does not match model input length");
  const LossKind loss_kind = attack_loss_kind(cfg.kind);
  const bool pgd_family =
      cfg.kind == AttackKind::kPgd || cfg.kind == AttackKind::kPgdL2;
  const std::size_t d = x.size();

  std::vector<double> delta(d, 0.0);
  double sigma = cfg.sigma0;
  // J depends on sigma only when the surrogate term is in the graph
  const bool sigma_in_graph =
      cfg.regularizer.kind == RegularizerKind::kAsl0 && cfg.regularizer.lambda != 0.0;

  auto evaluate = [&](std::span<const double> dd) {
    return objective_eval(model, x, y, dd, loss_kind, cfg.kappa, cfg.regularizer,
                          sigma);
  };

  ObjectiveEval ev = evaluate(delta);
  double ev_sigma = sigma;  // sigma the current tape was built with
  SigmaController ctrl{.sigma = sigma, .eta_d = cfg.eta_d, .eta_i = cfg.eta_i,
                       .j_star = ev.value.j};
  if (cfg.regularizer.kind == RegularizerKind::kAsl0)
    ctrl.sigma_min = sigma_stability_floor(cfg.alpha, cfg.regularizer.lambda);

  AttackOutcome out;
  out.initial_objective = ev.value.j;
  out.trace.reserve(static_cast<std::size_t>(cfg.iterations));

  std::optional<std::vector<double>> best;
  double best_norm = std::numeric_limits<double>::infinity();
  auto consider = [&](const std::vector<double>& cand, bool misclassified) {
    if (!misclassified) return;
    double n = l2_norm(cand);
    if (n < best_norm) {
      best_norm = n;
      best = cand;
    }
  };
  consider(delta, ev.misclassified);

  double prev_loss = ev.value.loss;
  int converged_streak = 0;

  if (!(cfg.early_stop && ev.misclassified)) {
    for (int t = 0; t < cfg.iterations; ++t) {
      // the step must use the current sigma; rebuild the tape when the
      // schedule moved it since the last evaluation
      if (sigma_in_graph && ev_sigma != sigma) {
        ev = evaluate(delta);
        ev_sigma = sigma;
      }
      ev.tape.backward(ev.j_node);
      NdArray grad = ev.tape.grad(ev.delta_node);
      if (!grad.all_finite())
        throw NumericError("attack: non-finite gradient at iteration " +
                           std::to_string(t) + " (sample aborted)");

      std::vector<double> prev_delta = delta;
      if (pgd_family) {
        for (std::size_t i = 0; i < d; ++i)
          delta[i] -= cfg.alpha * detail::sign(grad[i]);
      } else {
        for (std::size_t i = 0; i < d; ++i) delta[i] -= cfg.alpha * grad[i];
      }
      detail::apply_constraints(delta, x, cfg);

      ev = evaluate(delta);
      ev_sigma = sigma;
      bool progressed = ev.misclassified || ev.value.loss < prev_loss;
      out.trace.push_back({ev.value.j, ev.value.loss, ev.value.penalty, sigma,
                           progressed});
      consider(delta, ev.misclassified);
      prev_loss = ev.value.loss;
      out.iterations_used = t + 1;

      if (cfg.adaptive) {
        ctrl = sigma_update(ctrl, progressed, ev.value.j);
        sigma = ctrl.sigma;
      }

      if (cfg.early_stop && ev.misclassified) break;
      double step_inf = 0.0;
      for (std::size_t i = 0; i < d; ++i)
        step_inf = std::max(step_inf, std::fabs(delta[i] - prev_delta[i]));
      converged_streak = step_inf < 1e-9 ? converged_streak + 1 : 0;
      if (converged_streak >= 10) break;
    }
  }

  out.delta = best ? *best : delta;
  std::vector<double> perturbed(d);
  for (std::size_t i = 0; i < d; ++i) perturbed[i] = x[i] + out.delta[i];
  out.success = model.predict_class(perturbed) != y;
  out.l2_distance = l2_norm(out.delta);
  out.close_to_zero = close_to_zero_count(out.delta, cfg.epsilon_zero);
  out.final_sigma = sigma;
  out.sigma_clamp_events = ctrl.clamp_events;
  return out;
}

/// PGD family entry point (kind must be pgd or pgd_l2, non-adaptive).
inline AttackOutcome run_pgd(const Model& model, std::span<const double> x, int y,
                             const AttackConfig& cfg) {
  if (cfg.kind != AttackKind::kPgd && cfg.kind != AttackKind::kPgdL2)
    throw ConfigError("run_pgd: config kind must be pgd or pgd_l2");
  if (cfg.adaptive) throw ConfigError("run_pgd: use run_as for adaptive variants");
  return run_attack(model, x, y, cfg);
}

/// CW family entry point (kind must be cw or cw_l2, non-adaptive).
inline AttackOutcome run_cw(const Model& model, std::span<const double> x, int y,
                            const AttackConfig& cfg) {
  if (cfg.kind != AttackKind::kCw && cfg.kind != AttackKind::kCwL2)
    throw ConfigError("run_cw: config kind must be cw or cw_l2");
  if (cfg.adaptive) throw ConfigError("run_cw: use run_as for adaptive variants");
  return run_attack(model, x, y, cfg);
}

/// Adaptive-sigma wrapper around any base attack.
inline AttackOutcome run_as(const Model& model, std::span<const double> x, int y,
                            AttackConfig cfg) {
  cfg.adaptive = true;
  return run_attack(model, x, y, cfg);
}

}  // namespace tsadv
