#include "isolab/netgrad.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "isolab/errors.hpp"
#include "isolab/matrix_io.hpp"

namespace isolab {

std::string to_string(LossKind v) { return v == LossKind::cross_entropy_softmax ? "cross_entropy" : "mse"; }

LossKind parse_loss_kind(const std::string& s) {
  if (s == "cross_entropy" || s == "ce" || s == "cross_entropy_softmax") return LossKind::cross_entropy_softmax;
  if (s == "mse" || s == "mse_on_softmax") return LossKind::mse_on_softmax;
  throw std::invalid_argument("unknown loss '" + s + "'");
}

RealMatrix bn_jacobian_apply(const RealMatrix& h, const RealMatrix& g) {
  if (h.rows() != g.rows() || h.cols() != g.cols()) throw std::invalid_argument("bn_jacobian_apply: shape mismatch");
  RealMatrix out(h.rows(), h.cols());
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    const double norm = h.row(i).norm();
    if (!(norm > 0.0)) throw DegenerateRowError(static_cast<std::size_t>(i));
    const auto y = h.row(i) / norm;
    out.row(i) = (g.row(i) - y.dot(g.row(i)) * y) / norm;
  }
  return out;
}

RealMatrix bn_standard_backward(const RealMatrix& h, const RealMatrix& g, double eps) {
  if (h.rows() != g.rows() || h.cols() != g.cols()) throw std::invalid_argument("bn_standard_backward: shape mismatch");
  RealMatrix out(h.rows(), h.cols());
  const double n = static_cast<double>(h.cols());
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    const double mean = h.row(i).sum() / n;
    const Eigen::RowVectorXd c = h.row(i).array() - mean;
    const double s = std::sqrt(c.squaredNorm() / n + eps);
    const Eigen::RowVectorXd y = c / s;
    const double g_mean = g.row(i).sum() / n;
    const double gy_mean = g.row(i).dot(y) / n;
    out.row(i) = ((g.row(i).array() - g_mean) - y.array() * gy_mean).matrix() / s;
  }
  return out;
}

double bn_jacobian_opnorm(const RealMatrix& h) {
  double best = 0.0;
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    const double norm = h.row(i).norm();
    if (!(norm > 0.0)) return std::numeric_limits<double>::infinity();
    best = std::max(best, 1.0 / norm);
  }
  return best;
}

namespace {

RealVector softmax(const RealVector& z) {
  const double top = z.maxCoeff();
  RealVector p = (z.array() - top).exp();
  return p / p.sum();
}

void check_label(std::size_t label, Eigen::Index classes) {
  if (label >= static_cast<std::size_t>(classes)) {
    throw std::invalid_argument("label " + std::to_string(label) + " outside [0, " + std::to_string(classes) + ")");
  }
}

}  // namespace

double per_sample_loss(const RealVector& logits, std::size_t label, LossKind loss) {
  check_label(label, logits.size());
  const auto k = static_cast<Eigen::Index>(label);
  if (loss == LossKind::cross_entropy_softmax) {
    const double top = logits.maxCoeff();
    const double lse = top + std::log((logits.array() - top).exp().sum());
    return lse - logits(k);
  }
  RealVector r = softmax(logits);
  r(k) -= 1.0;
  return r.squaredNorm() / static_cast<double>(logits.size());
}

RealVector per_sample_logit_grad(const RealVector& logits, std::size_t label, LossKind loss) {
  check_label(label, logits.size());
  const auto k = static_cast<Eigen::Index>(label);
  const RealVector p = softmax(logits);
  if (loss == LossKind::cross_entropy_softmax) {
    RealVector g = p;
    g(k) -= 1.0;
    return g;
  }
  // l = (1/C) sum_j (p_j - y_j)^2, dl/dz = J_softmax^T * (2/C)(p - y)
  RealVector r = p;
  r(k) -= 1.0;
  const RealVector u = (2.0 / static_cast<double>(logits.size())) * r;
  return (p.array() * (u.array() - p.dot(u))).matrix();
}

LossResult loss_and_logit_grad(const RealMatrix& logits, const std::vector<std::size_t>& labels, LossKind loss) {
  if (static_cast<std::size_t>(logits.cols()) != labels.size()) {
    throw std::invalid_argument("loss: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(logits.cols()) + " samples");
  }
  LossResult out;
  out.logit_grad.resize(logits.rows(), logits.cols());
  const double n = static_cast<double>(logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const RealVector z = logits.col(j);
    const auto label = labels[static_cast<std::size_t>(j)];
    out.loss += per_sample_loss(z, label, loss);
    out.logit_grad.col(j) = per_sample_logit_grad(z, label, loss) / n;
  }
  out.loss /= n;
  return out;
}

GradientReport backward(const Network& net, const LayerTape& tape, const std::vector<std::size_t>& labels,
                        LossKind loss, const BackwardOptions& options) {
  const std::size_t depth = tape.layers.size();
  if (depth != net.weights.size()) throw std::invalid_argument("backward: tape does not match network depth");
  if (tape.logits.size() == 0) throw std::invalid_argument("backward: tape has no logits");

  GradientReport report;
  LossResult lr = loss_and_logit_grad(tape.logits, labels, loss);
  report.loss = lr.loss;
  report.classifier_grad = lr.logit_grad * tape.output.transpose();
  RealMatrix gx = net.classifier.transpose() * lr.logit_grad;

  report.layers.resize(depth);
  if (options.keep_weight_grads) report.weight_grads.resize(depth);
  for (std::size_t l = depth; l-- > 0;) {
    const LayerRecord& rec = tape.layers[l];
    RealMatrix gb = tape.activation == Activation::identity
                        ? gx
                        : RealMatrix(gx.cwiseProduct(activation_derivative(rec.normalized, tape.activation, rec.gain)));
    RealMatrix gh;
    if (tape.bn == BnVariant::simplified) {
      try {
        gh = bn_jacobian_apply(rec.pre_norm, gb);
      } catch (const DegenerateRowError& e) {
        throw DegenerateRowError(e.row(), l + 1);
      }
    } else {
      gh = bn_standard_backward(rec.pre_norm, gb);
    }
    RealMatrix gw = gh * rec.input.transpose();
    LayerGradient& lg = report.layers[l];
    lg.layer = l + 1;
    lg.grad_fro = gw.norm();
    lg.log_grad_fro = std::log(lg.grad_fro);
    lg.bn_jac_opnorm = bn_jacobian_opnorm(rec.pre_norm);
    lg.iso_gap_h = options.skip_iso_gap ? std::numeric_limits<double>::quiet_NaN() : isometry_gap(rec.pre_norm);
    if (l > 0) gx = net.weights[l].transpose() * gh;
    if (options.keep_weight_grads) report.weight_grads[l] = std::move(gw);
  }
  return report;
}

void write_gradient_csv(const GradientReport& report, std::ostream& out) {
  out << "layer,grad_fro,log_grad_fro,bn_jac_opnorm,iso_gap_H\n";
  for (const auto& lg : report.layers) {
    out << lg.layer << ',' << format_double(lg.grad_fro) << ',' << format_double(lg.log_grad_fro) << ','
        << format_double(lg.bn_jac_opnorm) << ',' << format_double(lg.iso_gap_h) << '\n';
  }
}

std::vector<RealMatrix> sgd_step(const std::vector<RealMatrix>& weights, const std::vector<RealMatrix>& grads,
                                 double lr) {
  if (lr < 0.0 || !std::isfinite(lr)) throw std::invalid_argument("sgd_step: learning rate must be >= 0");
  if (weights.size() != grads.size()) throw std::invalid_argument("sgd_step: weight/gradient count mismatch");
  std::vector<RealMatrix> out;
  out.reserve(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i].rows() != grads[i].rows() || weights[i].cols() != grads[i].cols()) {
      throw std::invalid_argument("sgd_step: shape mismatch at layer " + std::to_string(i + 1));
    }
    out.push_back(weights[i] - lr * grads[i]);
  }
  return out;
}

}  // namespace isolab
