#pragma once

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "isolab/netfwd.hpp"

namespace isolab {

enum class LossKind { cross_entropy_softmax, mse_on_softmax };

std::string to_string(LossKind v);
LossKind parse_loss_kind(const std::string& s);

/// Row i of the result is J_i G_i with J_i = (I - y y^T) / ||h_i||,
/// y = h_i / ||h_i||. Throws DegenerateRowError on a zero row of H.
RealMatrix bn_jacobian_apply(const RealMatrix& h, const RealMatrix& g);

/// Backward pass of bn_standard for cotangent G.
RealMatrix bn_standard_backward(const RealMatrix& h, const RealMatrix& g, double eps = kStandardBnEpsilon);

/// max_i 1/||H_i||; +inf when some row is zero.
double bn_jacobian_opnorm(const RealMatrix& h);

/// Gradient of the per-sample loss w.r.t. one logit vector.
RealVector per_sample_logit_grad(const RealVector& logits, std::size_t label, LossKind loss);
double per_sample_loss(const RealVector& logits, std::size_t label, LossKind loss);

struct LossResult {
  double loss = 0.0;      // mean over the batch
  RealMatrix logit_grad;  // C x n, gradient of the mean loss
};

/// Logits are C x n, one column per sample. Throws on labels outside [0, C).
LossResult loss_and_logit_grad(const RealMatrix& logits, const std::vector<std::size_t>& labels, LossKind loss);

struct LayerGradient {
  std::size_t layer = 0;  // from 1
  double grad_fro = 0.0;
  double log_grad_fro = 0.0;
  double bn_jac_opnorm = 0.0;
  double iso_gap_h = 0.0;
};

struct GradientReport {
  double loss = 0.0;
  std::vector<LayerGradient> layers;
  std::vector<RealMatrix> weight_grads;  // same shapes as Network::weights
  RealMatrix classifier_grad;
};

struct BackwardOptions {
  /// Skip the SVD of every H_l; iso_gap_h is reported as NaN.
  bool skip_iso_gap = false;
  /// Keep per-layer weight gradients in the report.
  bool keep_weight_grads = true;
};

GradientReport backward(const Network& net, const LayerTape& tape, const std::vector<std::size_t>& labels,
                        LossKind loss, const BackwardOptions& options = {});

/// Header "layer,grad_fro,log_grad_fro,bn_jac_opnorm,iso_gap_H", one row per
/// layer.
void write_gradient_csv(const GradientReport& report, std::ostream& out);

/// W - lr * grad for every pair. Throws on lr < 0 or shape mismatch.
std::vector<RealMatrix> sgd_step(const std::vector<RealMatrix>& weights, const std::vector<RealMatrix>& grads,
                                 double lr);

}  // namespace isolab
