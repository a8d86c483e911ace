#pragma once

#include <span>
#include <string>

#include "tsadv/error.hpp"
#include "tsadv/tape.hpp"

namespace tsadv {

/// Attack loss families. The PGD family maximizes cross-entropy, carried
/// here as the descent objective L = -CE; the CW family descends the
/// untargeted margin max(z_y - max_{j!=y} z_j, -kappa).
enum class LossKind { kCrossEntropyAscent, kCwMargin };

inline Tape::NodeId attack_loss_node(Tape& t, Tape::NodeId logits, int label,
                                     LossKind kind, double kappa) {
  if (t.value(logits).numel() < 2)
    throw ShapeError("attack_loss: logits must have length >= 2");
  switch (kind) {
    case LossKind::kCrossEntropyAscent:
      return t.neg(t.softmax_cross_entropy(logits, label));
    case LossKind::kCwMargin:
      return t.cw_margin(logits, label, kappa);
  }
  throw ConfigError("attack_loss: bad loss kind");
}

/// Value-level version of the above.
inline double attack_loss(std::span<const double> logits, int label, LossKind kind,
                          double kappa = 0.0) {
  Tape t;
  t.set_recording(false);
  auto z = t.leaf(NdArray::vec({logits.begin(), logits.end()}));
  return t.value(attack_loss_node(t, z, label, kind, kappa))[0];
}

}  // namespace tsadv
