#include "sodarec/align.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

#include "sodarec/pipeline.hpp"
#include "test_util.hpp"

using namespace sodarec;
using testutil::random_mat;

namespace {

// Row-stochastic random matrix via softmax of gaussian draws.
MatD random_dist(Rng& rng, int layers, int k) {
  MatD m = random_mat(rng, layers, k, 1.5);
  for (int l = 0; l < layers; ++l) {
    const double mx = m.row(l).maxCoeff();
    m.row(l) = (m.row(l).array() - mx).exp();
    m.row(l) /= m.row(l).sum();
  }
  return m;
}

// One-layer quantizer with codewords (0,0) and (1,0) over an identity encoder.
RqVae<double> two_codeword_rq() {
  TokenizerConfig<double> cfg;
  cfg.d_in = 2;
  cfg.d_code = 2;
  cfg.layers = 1;
  cfg.codebook_size = 2;
  cfg.hidden = 0;
  cfg.seed = 4;
  RqVae<double> rq(cfg);
  rq.encoder().w1.value = MatD::Identity(2, 2);
  rq.encoder().b1.value.setZero();
  rq.decoder().w1.value = MatD::Identity(2, 2);
  rq.decoder().b1.value.setZero();
  rq.codebook_mut(0) << 0, 0, 1, 0;
  return rq;
}

constexpr double kEps = 1e-10;

}  // namespace

TEST_CASE("target_distribution: hand-evaluated soft assignment on a toy quantizer") {
  RqVae<double> rq = two_codeword_rq();
  MatD z(1, 2);
  z << 0, 0;
  const MatD h = target_distribution(z, rq, 1.0);
  REQUIRE(h.rows() == 1);
  REQUIRE(h.cols() == 2);
  CHECK(std::fabs(h.row(0).sum() - 1.0) < 1e-6);
  CHECK(std::fabs(h(0, 0) - 0.7311) < 1e-4);
  CHECK(std::fabs(h(0, 1) - 0.2689) < 1e-4);

  // tau -> 0+ sharpens to the hard code.
  const MatD sharp = target_distribution(z, rq, 1e-6);
  CHECK(sharp(0, 0) > 0.999);
}

TEST_CASE("history_distribution: same pipeline as the target path, no encoder") {
  RqVae<double> rq = two_codeword_rq();
  Rng rng(601);

  // r_x exactly on a codeword: that layer's argmax holds for any tau.
  MatD on(1, 2);
  on << 1, 0;
  for (double tau : {0.05, 0.5, 5.0}) {
    const MatD h = history_distribution(on, rq, tau);
    CHECK(h(0, 1) > h(0, 0));
    CHECK(std::fabs(h.row(0).sum() - 1.0) < 1e-6);
  }

  // Definitional consistency with target_distribution at r_x = encode(z).
  for (int trial = 0; trial < 10; ++trial) {
    const MatD z = random_mat(rng, 1, 2);
    const MatD a = target_distribution(z, rq, 0.3);
    const MatD b = history_distribution(rq.encode(z), rq, 0.3);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  }

  MatD wrong(1, 3);
  wrong.setZero();
  CHECK_THROWS(history_distribution(wrong, rq, 0.3));
}

TEST_CASE("aggregate_negative: leave-self-out mean per layer") {
  MatD a(1, 2), b(1, 2), c(1, 2);
  a << 1, 0;
  b << 0, 1;
  c << 0.5, 0.5;
  const std::vector<MatD> batch = {c, a, b};

  const MatD neg = aggregate_negative(batch, 0);  // mean of a and b
  CHECK(neg(0, 0) == doctest::Approx(0.5));
  CHECK(neg(0, 1) == doctest::Approx(0.5));

  // All others identical -> that distribution.
  const std::vector<MatD> same = {a, c, c, c};
  const MatD neg2 = aggregate_negative(same, 0);
  CHECK((neg2 - c).cwiseAbs().maxCoeff() == 0.0);

  // Mean of row-stochastic rows stays row-stochastic.
  Rng rng(602);
  std::vector<MatD> rnd;
  for (int i = 0; i < 5; ++i) {
    rnd.push_back(random_dist(rng, 3, 4));
  }
  const MatD neg3 = aggregate_negative(rnd, 2);
  for (int l = 0; l < 3; ++l) {
    CHECK(std::fabs(neg3.row(l).sum() - 1.0) < 1e-9);
    CHECK(neg3.row(l).minCoeff() >= 0.0);
  }

  CHECK_THROWS(aggregate_negative(std::vector<MatD>{a}, 0));
}

TEST_CASE("distribution_score: identity, worked value, symmetry, non-positivity") {
  Rng rng(603);

  const MatD h = random_dist(rng, 2, 3);
  CHECK(distribution_score(h, h, kEps) == doctest::Approx(0.0).epsilon(1e-12));

  MatD p(1, 2), q(1, 2);
  p << 0.5, 0.5;
  q << 0.25, 0.75;
  const double s = distribution_score(p, q, kEps);
  CHECK(std::fabs(s - (-0.1373)) < 1e-3);
  CHECK(distribution_score(q, p, kEps) == doctest::Approx(s).epsilon(1e-12));

  for (int trial = 0; trial < 200; ++trial) {
    const MatD a = random_dist(rng, 3, 4);
    const MatD b = random_dist(rng, 3, 4);
    const double sab = distribution_score(a, b, kEps);
    CHECK(sab <= 0.0);
    CHECK(distribution_score(b, a, kEps) == doctest::Approx(sab).epsilon(1e-10));
    if ((a - b).cwiseAbs().maxCoeff() > 1e-6) {
      CHECK(sab < 0.0);
    }
  }
}

TEST_CASE("distribution_score: layer mean keeps scale independent of L") {
  MatD p(1, 2), q(1, 2);
  p << 0.5, 0.5;
  q << 0.25, 0.75;
  const double one = distribution_score(p, q, kEps);

  MatD p3(3, 2), q3(3, 2);
  for (int l = 0; l < 3; ++l) {
    p3.row(l) = p.row(0);
    q3.row(l) = q.row(0);
  }
  CHECK(distribution_score(p3, q3, kEps) == doctest::Approx(one).epsilon(1e-12));
}

TEST_CASE("soda_loss: worked values and monotonicity in the score gap") {
  Rng rng(604);
  const MatD hy = random_dist(rng, 2, 3);
  const MatD other = random_dist(rng, 2, 3);

  // Equal scores (identical positive and negative) -> ln 2.
  CHECK(std::fabs(soda_loss(other, other, hy, 100.0, kEps) - std::log(2.0)) < 1e-9);

  // Score-level worked value through the tape interface: beta=1, gap 1.
  Tape<double> t;
  const auto sp = t.constant(MatD::Constant(1, 1, -0.25));
  const auto sn = t.constant(MatD::Constant(1, 1, -1.25));
  const double l = t.val(soda_loss(t, sp, sn, 1.0))(0, 0);
  CHECK(std::fabs(l - std::log(1.0 + std::exp(-1.0))) < 1e-9);
  CHECK(std::fabs(l - 0.313262) < 1e-6);

  // Larger gaps strictly reduce the loss toward zero, for any beta.
  for (double beta : {0.5, 10.0, 100.0}) {
    double prev = 1e30;
    for (double gap : {-0.5, 0.0, 0.5, 1.0, 2.0}) {
      Tape<double> tg;
      const auto a = tg.constant(MatD::Constant(1, 1, gap));
      const auto b = tg.constant(MatD::Zero(1, 1));
      const double cur = tg.val(soda_loss(tg, a, b, beta))(0, 0);
      CHECK(cur < prev);
      CHECK(cur > 0.0);
      prev = cur;
    }
  }
}

TEST_CASE("soda_loss: invariant to a common shift of both scores") {
  for (double shift : {-3.0, -0.5, 0.0, 0.7, 4.0}) {
    Tape<double> t;
    const auto sp = t.constant(MatD::Constant(1, 1, -0.4));
    const auto sn = t.constant(MatD::Constant(1, 1, -1.1));
    const auto sp2 = t.constant(MatD::Constant(1, 1, -0.4 + shift));
    const auto sn2 = t.constant(MatD::Constant(1, 1, -1.1 + shift));
    const double a = t.val(soda_loss(t, sp, sn, 7.0))(0, 0);
    const double b = t.val(soda_loss(t, sp2, sn2, 7.0))(0, 0);
    CHECK(std::fabs(a - b) < 1e-9);
  }
}

TEST_CASE("pointwise_variant: worked values and beta monotonicity") {
  Rng rng(605);
  const MatD hy = random_dist(rng, 2, 3);

  // s+ = 0 at identical distributions -> ln 2.
  CHECK(std::fabs(pointwise_variant(hy, hy, 5.0, kEps) - std::log(2.0)) < 1e-9);

  // s+ = -1, beta = 1 -> ln(1 + e).
  Tape<double> t;
  const auto sp = t.constant(MatD::Constant(1, 1, -1.0));
  const double l = t.val(pointwise_variant(t, sp, 1.0))(0, 0);
  CHECK(std::fabs(l - std::log(1.0 + std::exp(1.0))) < 1e-9);
  CHECK(std::fabs(l - 1.313262) < 1e-6);

  // Doubling beta at a negative score increases the loss.
  const MatD other = random_dist(rng, 2, 3);
  const double l1 = pointwise_variant(other, hy, 1.0, kEps);
  const double l2 = pointwise_variant(other, hy, 2.0, kEps);
  CHECK(l2 > l1);
}

TEST_CASE("combined_loss: arithmetic and lambda contract") {
  CHECK(combined_loss(2.0, 3.0, 0.0) == 2.0);
  CHECK(combined_loss(2.0, 3.0, 1.0) == 5.0);
  // Linear in lambda.
  const double a = combined_loss(1.0, 2.0, 0.25);
  const double b = combined_loss(1.0, 2.0, 0.75);
  CHECK((a + b) / 2.0 == doctest::Approx(combined_loss(1.0, 2.0, 0.5)));
  CHECK_THROWS(combined_loss(1.0, 1.0, -0.1));
}

TEST_CASE("tape and plain score paths agree on random distribution pairs") {
  Rng rng(607);
  for (int trial = 0; trial < 20; ++trial) {
    const MatD a = random_dist(rng, 3, 5);
    const MatD b = random_dist(rng, 3, 5);
    const double plain = distribution_score(a, b, kEps);
    Tape<double> t;
    const double taped =
        t.val(distribution_score(t, t.constant(a), t.constant(b), kEps))(0, 0);
    CHECK(std::fabs(plain - taped) < 1e-9);
  }
}

TEST_CASE("tape history_distribution matches the plain evaluation") {
  RqVae<double> rq = two_codeword_rq();
  Rng rng(608);
  for (int trial = 0; trial < 10; ++trial) {
    const MatD r = random_mat(rng, 1, 2);
    const MatD plain = history_distribution(r, rq, 0.4);
    Tape<double> t;
    const MatD taped = t.val(history_distribution(t, rq, t.constant(r), 0.4));
    CHECK((plain - taped).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("alignment path: tape gradients match finite differences end to end") {
  for (uint64_t seed : {31ull, 32ull}) {
    CHECK(grad_check_align_path(seed) < 1e-4);
  }
}
