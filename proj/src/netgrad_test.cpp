#include "doctest.h"

#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "isolab/errors.hpp"
#include "isolab/netgrad.hpp"

using namespace isolab;

namespace {

// Central differences of <G, bn(H)> with respect to H.
RealMatrix fd_bn_vjp(const RealMatrix& h, const RealMatrix& g, BnVariant variant, double step = 1e-6) {
  RealMatrix out(h.rows(), h.cols());
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    for (Eigen::Index j = 0; j < h.cols(); ++j) {
      RealMatrix a = h;
      RealMatrix b = h;
      a(i, j) += step;
      b(i, j) -= step;
      out(i, j) = ((batch_norm(a, variant) - batch_norm(b, variant)).cwiseProduct(g).sum()) / (2.0 * step);
    }
  }
  return out;
}

double rel_err(const RealMatrix& a, const RealMatrix& b) {
  return (a - b).norm() / std::max(1e-300, std::max(a.norm(), b.norm()));
}

// H = W * BN(G): the shape of pre-normalization values inside the network
// (trace of H H^T equals the row count).
RealMatrix network_like_h(std::size_t d, double noise, Rng& rng) {
  const RealMatrix x = bn_simplified(sample_haar_orthogonal(d, rng) + noise * sample_gaussian(d, d, 1.0, rng));
  return sample_haar_orthogonal(d, rng) * x;
}

double lambda_min(const RealMatrix& h) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(h * h.transpose()));
  return es.eigenvalues().minCoeff();
}

}  // namespace

TEST_CASE("bn jacobian examples") {
  RealMatrix h(1, 2);
  h << 3, 4;
  RealMatrix g(1, 2);
  g << -4, 3;
  const RealMatrix out = bn_jacobian_apply(h, g);
  CHECK(out(0, 0) == doctest::Approx(-0.8).epsilon(1e-14));
  CHECK(out(0, 1) == doctest::Approx(0.6).epsilon(1e-14));

  RealMatrix e(1, 3);
  e << 2.5, 0, 0;
  RealMatrix ge(1, 3);
  ge << 1, 0, 0;
  CHECK(bn_jacobian_apply(e, ge).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("bn jacobian annihilates its own rows and has spectrum {1/|h|, 0}") {
  Rng rng(12);
  const RealMatrix h = sample_gaussian(5, 7, 2.0, rng);
  const RealMatrix out = bn_jacobian_apply(h, h);
  CHECK(out.cwiseAbs().maxCoeff() < 1e-10 * h.cwiseAbs().maxCoeff());

  // materialize one block and check its eigenvalues
  const Eigen::Index n = h.cols();
  RealMatrix block(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    RealMatrix basis = RealMatrix::Zero(1, n);
    basis(0, k) = 1.0;
    block.col(k) = bn_jacobian_apply(h.row(0), basis).row(0).transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(0.5 * (block + block.transpose())));
  const RealVector ev = es.eigenvalues();
  const double inv = 1.0 / h.row(0).norm();
  CHECK(std::abs(ev(0)) < 1e-12);
  for (Eigen::Index k = 1; k < n; ++k) CHECK(ev(k) == doctest::Approx(inv).epsilon(1e-10));
}

TEST_CASE("bn jacobian matches finite differences") {
  Rng rng(2024);
  for (std::size_t d : {3u, 8u, 16u}) {
    for (int t = 0; t < 100; ++t) {
      const std::size_t n = d;
      const RealMatrix h = sample_gaussian(d, n, 1.0, rng);
      const RealMatrix g = sample_gaussian(d, n, 1.0, rng);
      CHECK(rel_err(bn_jacobian_apply(h, g), fd_bn_vjp(h, g, BnVariant::simplified)) < 1e-5);
    }
  }
}

TEST_CASE("standard bn backward matches finite differences") {
  Rng rng(7);
  for (int t = 0; t < 30; ++t) {
    const RealMatrix h = sample_gaussian(4, 9, 1.0, rng);
    const RealMatrix g = sample_gaussian(4, 9, 1.0, rng);
    CHECK(rel_err(bn_standard_backward(h, g), fd_bn_vjp(h, g, BnVariant::standard)) < 1e-5);
  }
}

TEST_CASE("bn jacobian rejects zero rows") {
  RealMatrix h = RealMatrix::Ones(3, 3);
  h.row(2).setZero();
  CHECK_THROWS_AS(bn_jacobian_apply(h, h), DegenerateRowError);
  CHECK(std::isinf(bn_jacobian_opnorm(h)));
}

TEST_CASE("operator norm examples") {
  Rng rng(3);
  CHECK(bn_jacobian_opnorm(sample_haar_orthogonal(6, rng)) == doctest::Approx(1.0).epsilon(1e-12));
  RealMatrix d2 = RealMatrix::Zero(2, 2);
  d2(0, 0) = 2.0;
  d2(1, 1) = 1.0;
  CHECK(bn_jacobian_opnorm(d2) == 1.0);
  CHECK(1.0 / std::sqrt(lambda_min(d2)) == doctest::Approx(1.0));
}

TEST_CASE("operator norm bounds") {
  Rng rng(99);
  std::size_t small_gap = 0;
  for (int t = 0; t < 400; ++t) {
    const std::size_t d = 2 + rng.below(15);
    const double noise = std::pow(10.0, -3.0 + 3.5 * rng.uniform());
    const RealMatrix h = network_like_h(d, noise, rng);
    const double op = bn_jacobian_opnorm(h);
    const double phi = isometry_gap(h);
    const double dd = static_cast<double>(d);
    CHECK(op <= 1.0 / std::sqrt(lambda_min(h)) + 1e-9);
    CHECK(std::log(op) <= dd * phi + 1.0);
    if (phi <= 1.0 / (16.0 * dd)) {
      ++small_gap;
      CHECK(std::log(op) <= 2.0 * std::sqrt(dd * phi) + 1e-12);
    }
  }
  CHECK(small_gap > 50);
}

TEST_CASE("one layer jacobian norm is bounded by the bn jacobian norm") {
  // X -> BN(W X) with identity activation; W orthogonal.
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    const std::size_t d = 4;
    const RealMatrix w = sample_haar_orthogonal(d, rng);
    const RealMatrix x = bn_simplified(sample_gaussian(d, d, 1.0, rng));
    const RealMatrix h = w * x;
    const Eigen::Index m = static_cast<Eigen::Index>(d * d);
    RealMatrix jt(m, m);  // rows: vjp of basis cotangents
    for (Eigen::Index k = 0; k < m; ++k) {
      RealMatrix g = RealMatrix::Zero(d, d);
      g.data()[k] = 1.0;
      const RealMatrix v = w.transpose() * bn_jacobian_apply(h, g);
      for (Eigen::Index q = 0; q < m; ++q) jt(k, q) = v.data()[q];
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(jt);
    CHECK(std::log(svd.singularValues()(0)) <= std::log(bn_jacobian_opnorm(h)) + 1e-9);
  }
}

TEST_CASE("cross entropy logit gradient") {
  RealVector z = RealVector::Zero(2);
  const RealVector g = per_sample_logit_grad(z, 0, LossKind::cross_entropy_softmax);
  CHECK(g(0) == doctest::Approx(-0.5));
  CHECK(g(1) == doctest::Approx(0.5));
  CHECK(g.norm() == doctest::Approx(0.70711).epsilon(1e-5));
  CHECK(per_sample_loss(z, 1, LossKind::cross_entropy_softmax) == doctest::Approx(std::log(2.0)));
  // large logits stay finite
  RealVector big(3);
  big << 1000.0, -1000.0, 0.0;
  CHECK(std::isfinite(per_sample_loss(big, 1, LossKind::cross_entropy_softmax)));
  CHECK(all_finite(per_sample_logit_grad(big, 1, LossKind::cross_entropy_softmax)));
}

TEST_CASE("logit gradients are bounded by 2 and match finite differences") {
  Rng rng(41);
  for (LossKind loss : {LossKind::cross_entropy_softmax, LossKind::mse_on_softmax}) {
    for (int t = 0; t < 500; ++t) {
      const std::size_t c = 2 + rng.below(12);
      RealVector z(static_cast<Eigen::Index>(c));
      const double scale = std::pow(10.0, 2.0 * rng.uniform() - 1.0);
      for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = scale * rng.normal();
      const std::size_t k = rng.below(c);
      const RealVector g = per_sample_logit_grad(z, k, loss);
      CHECK(g.norm() <= 2.0);
      if (t < 50) {
        RealVector fd(z.size());
        for (Eigen::Index i = 0; i < z.size(); ++i) {
          RealVector a = z;
          RealVector b = z;
          a(i) += 1e-6;
          b(i) -= 1e-6;
          fd(i) = (per_sample_loss(a, k, loss) - per_sample_loss(b, k, loss)) / 2e-6;
        }
        CHECK((g - fd).norm() <= 1e-5 * std::max(1.0, g.norm()));
      }
    }
    const RealVector uniform = RealVector::Zero(10);
    CHECK(per_sample_logit_grad(uniform, 3, loss).norm() <= 2.0);
  }
}

TEST_CASE("batch loss averages over samples") {
  RealMatrix logits = RealMatrix::Zero(3, 4);
  const LossResult r = loss_and_logit_grad(logits, {0, 1, 2, 0}, LossKind::cross_entropy_softmax);
  CHECK(r.loss == doctest::Approx(std::log(3.0)));
  CHECK(r.logit_grad(0, 0) == doctest::Approx((1.0 / 3.0 - 1.0) / 4.0));
  CHECK_THROWS(loss_and_logit_grad(logits, {0, 1, 3, 0}, LossKind::cross_entropy_softmax));
  CHECK_THROWS(loss_and_logit_grad(logits, {0, 1}, LossKind::cross_entropy_softmax));
}

TEST_CASE("full backward matches finite differences of the loss") {
  struct Case {
    BnVariant bn;
    Activation act;
    LossKind loss;
    std::size_t depth;
  };
  const Case cases[] = {
      {BnVariant::simplified, Activation::identity, LossKind::cross_entropy_softmax, 1},
      {BnVariant::simplified, Activation::identity, LossKind::cross_entropy_softmax, 4},
      {BnVariant::simplified, Activation::tanh, LossKind::mse_on_softmax, 3},
      {BnVariant::standard, Activation::sin, LossKind::cross_entropy_softmax, 3},
      {BnVariant::standard, Activation::tanh, LossKind::mse_on_softmax, 2},
  };
  for (const Case& k : cases) {
    NetworkConfig cfg;
    cfg.width = 2;
    cfg.batch = 3;
    cfg.classes = 2;
    cfg.depth = k.depth;
    cfg.bn = k.bn;
    cfg.activation = k.act;
    if (k.act != Activation::identity) cfg.gain = GainSchedule::power_law(0.6);
    if (k.depth > 1) {
      cfg.width = 5;
      cfg.classes = 3;
      cfg.batch = 6;
    }
    Rng rng(100 + k.depth);
    const Network net = init_network(cfg, rng);
    const RealMatrix x = sample_gaussian(cfg.width, cfg.batch, 1.0, rng);
    std::vector<std::size_t> labels(cfg.batch);
    for (auto& y : labels) y = rng.below(cfg.classes);
    const GradientReport rep = backward(net, forward(net, x), labels, k.loss);
    REQUIRE(rep.weight_grads.size() == k.depth);
    for (std::size_t l = 0; l < k.depth; ++l) {
      RealMatrix fd(net.weights[l].rows(), net.weights[l].cols());
      for (Eigen::Index i = 0; i < fd.rows(); ++i) {
        for (Eigen::Index j = 0; j < fd.cols(); ++j) {
          Network a = net;
          Network b = net;
          a.weights[l](i, j) += 1e-6;
          b.weights[l](i, j) -= 1e-6;
          const double fa = loss_and_logit_grad(forward(a, x).logits, labels, k.loss).loss;
          const double fb = loss_and_logit_grad(forward(b, x).logits, labels, k.loss).loss;
          fd(i, j) = (fa - fb) / 2e-6;
        }
      }
      CHECK(rel_err(rep.weight_grads[l], fd) < 1e-5);
      CHECK(rep.layers[l].layer == l + 1);
      CHECK(rep.layers[l].grad_fro == doctest::Approx(rep.weight_grads[l].norm()));
      CHECK(rep.layers[l].log_grad_fro == doctest::Approx(std::log(rep.layers[l].grad_fro)));
    }
  }
}

TEST_CASE("gradient report csv") {
  NetworkConfig cfg;
  cfg.width = 4;
  cfg.batch = 4;
  cfg.classes = 2;
  cfg.depth = 3;
  Rng rng(1);
  const Network net = init_network(cfg, rng);
  const RealMatrix x = sample_gaussian(4, 4, 1.0, rng);
  const GradientReport rep = backward(net, forward(net, x), {0, 1, 1, 0}, LossKind::cross_entropy_softmax);
  std::ostringstream out;
  write_gradient_csv(rep, out);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "layer,grad_fro,log_grad_fro,bn_jac_opnorm,iso_gap_H");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    CHECK(line.rfind(std::to_string(rows) + ",", 0) == 0);
  }
  CHECK(rows == 3);
  for (const auto& lg : rep.layers) {
    CHECK(std::isfinite(lg.grad_fro));
    CHECK(std::isfinite(lg.bn_jac_opnorm));
    CHECK(lg.iso_gap_h >= 0.0);
  }
}

TEST_CASE("sgd step") {
  std::vector<RealMatrix> w = {RealMatrix::Constant(1, 1, 1.0)};
  std::vector<RealMatrix> g = {RealMatrix::Constant(1, 1, 2.0)};
  CHECK(sgd_step(w, g, 0.1)[0](0, 0) == doctest::Approx(0.8));
  CHECK(sgd_step(w, g, 0.0)[0] == w[0]);
  CHECK_THROWS(sgd_step(w, g, -1.0));
  CHECK_THROWS(sgd_step(w, {RealMatrix::Zero(2, 1)}, 0.1));

  Rng rng(8);
  const RealMatrix q = sample_haar_orthogonal(5, rng);
  const auto stepped = sgd_step({q}, {sample_gaussian(5, 5, 1.0, rng)}, 0.01);
  const double phi = isometry_gap(stepped[0]);
  CHECK(std::isfinite(phi));
  CHECK(phi >= 0.0);
}

TEST_CASE("loss kind names") {
  CHECK(parse_loss_kind("ce") == LossKind::cross_entropy_softmax);
  CHECK(parse_loss_kind("mse") == LossKind::mse_on_softmax);
  CHECK(parse_loss_kind(to_string(LossKind::mse_on_softmax)) == LossKind::mse_on_softmax);
  CHECK_THROWS(parse_loss_kind("hinge"));
}
