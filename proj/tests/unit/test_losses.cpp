#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "bcr/attack.hpp"
#include "bcr/errors.hpp"
#include "bcr/losses.hpp"
#include "bcr/roi.hpp"
#include "oracles.hpp"
#include "toy_fixture.hpp"

using namespace bcr;
using namespace bcr::losses;
using ad::Matrix;

namespace {

Matrix to_matrix(const oracle::Rows& z) {
  Matrix m(static_cast<Eigen::Index>(z.size()), static_cast<Eigen::Index>(z[0].size()));
  for (std::size_t i = 0; i < z.size(); ++i)
    for (std::size_t d = 0; d < z[i].size(); ++d) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = z[i][d];
  return m;
}

Matrix rows(std::initializer_list<std::initializer_list<double>> values) {
  oracle::Rows z;
  for (const auto& r : values) z.emplace_back(r);
  return to_matrix(z);
}

oracle::Rows shuffled(oracle::Rows z, Rng& rng) {
  for (std::size_t i = z.size(); i > 1; --i) std::swap(z[i - 1], z[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
  return z;
}

// Central differences (h = 1e-4) of a loss against its tape gradient for
// every entry of both operands.
void check_loss_gradient(const Matrix& zr, const Matrix& zb,
                         const std::function<ad::Var(ad::Var, ad::Var)>& loss) {
  ad::Tape tape;
  const ad::Var r = tape.variable(zr), b = tape.variable(zb);
  tape.backward(loss(r, b));
  auto value = [&](const Matrix& a, const Matrix& c) {
    ad::Tape t;
    return loss(t.constant(a), t.constant(c)).scalar();
  };
  const double h = 1e-4;
  double worst = 0.0;
  for (int which = 0; which < 2; ++which) {
    const Matrix& base = which ? zb : zr;
    const Matrix& grad = which ? b.grad() : r.grad();
    for (Eigen::Index i = 0; i < base.size(); ++i) {
      Matrix up = base, down = base;
      up.data()[i] += h;
      down.data()[i] -= h;
      const double fd = which ? (value(zr, up) - value(zr, down)) / (2 * h) : (value(up, zb) - value(down, zb)) / (2 * h);
      const double g = grad.size() ? grad.data()[i] : 0.0;
      worst = std::max(worst, oracle::relative_error(g, fd, 1e-8));
    }
  }
  CHECK(worst <= 1e-3);
}

}  // namespace

TEST_CASE("stat loss examples") {
  CHECK(stat_loss(rows({{1, 1}, {-1, -1}}), rows({{1, 1}, {-1, -1}})) == 0.0);
  CHECK(stat_loss(rows({{2, 2}}), rows({{0, 0}, {0, 0}})) == doctest::Approx(8.0).epsilon(1e-12));
  // Same per-dimension mean (0, 1) and std (1, 2) from different tokens.
  const Matrix zr = rows({{1, 3}, {-1, -1}});
  const Matrix zb = rows({{-1, 3}, {1, -1}, {1, 3}, {-1, -1}});
  CHECK(stat_loss(zr, zb) < 1e-10);
  CHECK_THROWS_AS(stat_loss(Matrix(0, 2), zb), EmptySetError);
  CHECK_THROWS_AS(stat_loss(rows({{1, 2, 3}}), zb), ShapeMismatch);
}

TEST_CASE("soft assignment examples") {
  const Matrix single = soft_assignment(rows({{0.3, -2}}), rows({{5, 1}}), 0.07, SimilarityMode::kCosine);
  CHECK(single(0, 0) == 1.0);

  const Matrix tie = soft_assignment(rows({{1, 0}}), rows({{0, 1}, {0, -1}}), 0.07, SimilarityMode::kCosine);
  CHECK(tie(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(tie(0, 1) == doctest::Approx(0.5).epsilon(1e-12));

  const Matrix raw = soft_assignment(rows({{1, 0}}), rows({{1, 0}, {0, 1}}), 1.0, SimilarityMode::kRawDot);
  const auto want = oracle::softmax({1.0, 0.0});
  CHECK(raw(0, 0) == doctest::Approx(want[0]).epsilon(1e-12));
  CHECK(raw(0, 1) == doctest::Approx(want[1]).epsilon(1e-12));
  CHECK(raw(0, 0) == doctest::Approx(0.7311).epsilon(1e-4));

  CHECK_THROWS_AS(soft_assignment(rows({{1, 0}}), rows({{1, 0}}), 0.0, SimilarityMode::kCosine), ConfigError);
}

TEST_CASE("dictionary loss examples") {
  CHECK(dictionary_loss(rows({{0.2, 0.7}}), rows({{0.2, 0.7}}), 0.07, SimilarityMode::kCosine) == doctest::Approx(0.0));
  const double got = dictionary_loss(rows({{1, 0}}), rows({{1, 0}, {0, 1}}), 1.0, SimilarityMode::kRawDot);
  const double e = std::exp(1.0);
  CHECK(got == doctest::Approx(2.0 / ((1 + e) * (1 + e))).epsilon(1e-12));
  CHECK(got == doctest::Approx(0.1447).epsilon(1e-3));
}

TEST_CASE("preservation loss examples") {
  const Matrix clean = rows({{0, 0}, {1, 1}});
  CHECK(preservation_loss(clean, clean) == 0.0);
  CHECK(preservation_loss(rows({{3, 4}, {1, 1}}), clean) == doctest::Approx(12.5).epsilon(1e-12));
  CHECK_THROWS_AS(preservation_loss(rows({{3, 4}}), clean), ShapeMismatch);
}

TEST_CASE("tv loss examples") {
  Rng rng(1);
  CHECK(tv_loss(ImageTensor::filled(5, 4, 0.3), build_pixel_mask(RoiSpec{{Box{1, 1, 4, 4}}}, 5, 4)) == 0.0);

  std::vector<double> chw(12, 0.0);
  chw[1] = chw[2] = 1.0;
  CHECK(tv_loss(ImageTensor(2, 2, chw), PixelMask::full(2, 2)) == doctest::Approx(4.0).epsilon(1e-12));

  const auto noisy = oracle::random_image(rng, 6, 6);
  CHECK(tv_loss(noisy, build_pixel_mask(RoiSpec{{Box{3, 2, 4, 3}}}, 6, 6)) == 0.0);
}

TEST_CASE("tv loss matches the loop oracle on random masks") {
  Rng rng(2);
  for (int k = 0; k < 50; ++k) {
    const int h = rng.uniform_int(2, 10), w = rng.uniform_int(2, 10);
    const auto img = oracle::random_image(rng, h, w);
    const RoiSpec roi{{oracle::random_box(rng, h, w), oracle::random_box(rng, h, w)}};
    const auto mask = build_pixel_mask(roi, h, w);
    CHECK(tv_loss(img, mask) == doctest::Approx(oracle::tv(img, mask.bits())).epsilon(1e-12));
    ad::Tape tape;
    CHECK(tv_loss(tape.constant(image_to_matrix(img)), mask).scalar() ==
          doctest::Approx(oracle::tv(img, mask.bits())).epsilon(1e-12));
  }
}

TEST_CASE("losses match the loop oracles and are non-negative on random inputs") {
  Rng rng(3);
  for (int k = 0; k < 200; ++k) {
    const int nr = rng.uniform_int(1, 5), nb = rng.uniform_int(1, 7), d = rng.uniform_int(1, 9);
    const double scale = rng.uniform(0.1, 3.0);
    const auto zr = oracle::random_rows(rng, nr, d, scale), zb = oracle::random_rows(rng, nb, d, scale);
    const auto zc = oracle::random_rows(rng, nb, d, scale);
    const double tau = rng.uniform(0.05, 2.0);
    const bool cosine = k % 2 == 0;
    const auto mode = cosine ? SimilarityMode::kCosine : SimilarityMode::kRawDot;

    const double s = stat_loss(to_matrix(zr), to_matrix(zb));
    const double dl = dictionary_loss(to_matrix(zr), to_matrix(zb), tau, mode);
    const double p = preservation_loss(to_matrix(zb), to_matrix(zc));
    CHECK(s >= 0.0);
    CHECK(dl >= 0.0);
    CHECK(p >= 0.0);
    CHECK(s == doctest::Approx(oracle::stat(zr, zb)).epsilon(1e-10));
    CHECK(dl == doctest::Approx(oracle::dictionary(zr, zb, tau, cosine)).epsilon(1e-10));
    CHECK(p == doctest::Approx(oracle::preservation(zb, zc)).epsilon(1e-12));
  }
}

TEST_CASE("losses are invariant to token order within each set") {
  Rng rng(4);
  for (int k = 0; k < 50; ++k) {
    const auto zr = oracle::random_rows(rng, 4, 6), zb = oracle::random_rows(rng, 6, 6);
    const auto zc = oracle::random_rows(rng, 6, 6);
    const auto zr2 = shuffled(zr, rng);
    // Permute adversarial and clean background consistently.
    std::vector<int> perm(zb.size());
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
    oracle::Rows zb2, zc2;
    for (int i : perm) {
      zb2.push_back(zb[static_cast<std::size_t>(i)]);
      zc2.push_back(zc[static_cast<std::size_t>(i)]);
    }
    CHECK(stat_loss(to_matrix(zr2), to_matrix(zb2)) == doctest::Approx(stat_loss(to_matrix(zr), to_matrix(zb))).epsilon(1e-12));
    CHECK(dictionary_loss(to_matrix(zr2), to_matrix(zb2), 0.07, SimilarityMode::kCosine) ==
          doctest::Approx(dictionary_loss(to_matrix(zr), to_matrix(zb), 0.07, SimilarityMode::kCosine)).epsilon(1e-12));
    CHECK(preservation_loss(to_matrix(zb2), to_matrix(zc2)) ==
          doctest::Approx(preservation_loss(to_matrix(zb), to_matrix(zc))).epsilon(1e-12));
  }
}

TEST_CASE("soft assignment rows are stochastic and sharpen to the argmax") {
  Rng rng(5);
  for (int k = 0; k < 200; ++k) {
    const auto zr = oracle::random_rows(rng, 3, 5), zb = oracle::random_rows(rng, 6, 5);
    const Matrix a = soft_assignment(to_matrix(zr), to_matrix(zb), rng.uniform(0.01, 1.0), SimilarityMode::kCosine);
    for (Eigen::Index i = 0; i < a.rows(); ++i) CHECK(std::abs(a.row(i).sum() - 1.0) <= 1e-9);
    CHECK(a.minCoeff() >= 0.0);

    const Matrix sharp = soft_assignment(to_matrix(zr), to_matrix(zb), 1e-4, SimilarityMode::kCosine);
    for (std::size_t i = 0; i < zr.size(); ++i) {
      std::vector<double> sims;
      for (const auto& b : zb) sims.push_back(oracle::similarity(zr[i], b, true));
      auto sorted = sims;
      std::sort(sorted.rbegin(), sorted.rend());
      if (sorted[0] - sorted[1] < 3e-3) continue;
      const auto arg = std::max_element(sims.begin(), sims.end()) - sims.begin();
      for (Eigen::Index j = 0; j < sharp.cols(); ++j) CHECK(std::abs(sharp(static_cast<Eigen::Index>(i), j) - (j == arg)) <= 1e-6);
    }
  }
}

TEST_CASE("loss gradients match finite differences on random 5-token instances") {
  Rng rng(6);
  for (int k = 0; k < 10; ++k) {
    const Matrix zr = to_matrix(oracle::random_rows(rng, 2, 4)), zb = to_matrix(oracle::random_rows(rng, 3, 4));
    const Matrix zc = to_matrix(oracle::random_rows(rng, 3, 4));
    check_loss_gradient(zr, zb, [](ad::Var r, ad::Var b) { return stat_loss(r, b); });
    check_loss_gradient(zr, zb, [](ad::Var r, ad::Var b) { return dictionary_loss(r, b, 0.5, SimilarityMode::kCosine); });
    check_loss_gradient(zr, zb, [](ad::Var r, ad::Var b) { return dictionary_loss(r, b, 1.0, SimilarityMode::kRawDot); });
    check_loss_gradient(zr, zb, [zc](ad::Var r, ad::Var b) { return ad::add(preservation_loss(b, zc), ad::sum(ad::square(r))); });
  }
}

TEST_CASE("dictionary gradient reaches the background dictionary") {
  ad::Tape tape;
  const ad::Var r = tape.variable(rows({{1, 0.2}}));
  const ad::Var b = tape.variable(rows({{0.3, 1}, {-1, 0.5}}));
  tape.backward(dictionary_loss(r, b, 0.5, SimilarityMode::kCosine));
  REQUIRE(b.grad().size() == 4);
  CHECK(b.grad().cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("composite loss decomposition") {
  const auto enc = fixture::encoder();
  const auto img = fixture::image();
  const auto roi = fixture::roi();
  const AttackConfig config = default_config();
  const auto mask = build_pixel_mask(roi, 16, 16);
  const auto part = partition_tokens(roi, 16, 16, 2);
  const auto clean = extract_features(*enc, img, config.layers);

  SUBCASE("clean image: pres is zero, total is the weighted rest") {
    const auto b = composite_loss(config, clean, clean, part, img, mask);
    CHECK(b.pres == 0.0);
    CHECK(b.total == doctest::Approx(b.stat + b.dict + 1e-3 * b.tv).epsilon(1e-12));
  }

  SUBCASE("all weights zero") {
    AttackConfig zero = config;
    zero.lambda_stat = zero.lambda_dict = zero.lambda_pres = zero.lambda_tv = 0.0;
    CHECK(composite_loss(zero, clean, clean, part, img, mask).total == 0.0);
  }

  SUBCASE("breakdown equals a direct recomputation from the component ops") {
    AttackConfig c = config;
    c.lambda_stat = 0.7;
    c.lambda_dict = 1.3;
    c.lambda_pres = 2.0;
    c.lambda_tv = 0.01;
    Rng rng(7);
    std::vector<double> x(img.data().begin(), img.data().end());
    for (double& v : x) v = std::clamp(v + rng.uniform(-0.1, 0.1), 0.0, 1.0);
    const ImageTensor adv_img(16, 16, x);
    const auto adv = extract_features(*enc, adv_img, c.layers);
    const auto b = composite_loss(c, adv, clean, part, adv_img, mask);

    double stat = 0, dict = 0, pres = 0;
    for (int l : c.layers) {
      const Matrix zr = select_tokens(adv.at(l), part.roi_indices);
      const Matrix zb = select_tokens(adv.at(l), part.background_indices);
      const Matrix zc = select_tokens(clean.at(l), part.background_indices);
      const double s = stat_loss(zr, zb), d = dictionary_loss(zr, zb, c.tau, c.similarity_mode);
      const double p = preservation_loss(zb, zc);
      CHECK(b.per_layer.at(l).stat == doctest::Approx(s).epsilon(1e-12));
      CHECK(b.per_layer.at(l).dict == doctest::Approx(d).epsilon(1e-12));
      CHECK(b.per_layer.at(l).pres == doctest::Approx(p).epsilon(1e-12));
      stat += s;
      dict += d;
      pres += p;
    }
    const double tv = tv_loss(adv_img, mask);
    CHECK(b.stat == doctest::Approx(stat).epsilon(1e-12));
    CHECK(b.dict == doctest::Approx(dict).epsilon(1e-12));
    CHECK(b.pres == doctest::Approx(pres).epsilon(1e-12));
    CHECK(b.tv == doctest::Approx(tv).epsilon(1e-12));
    CHECK(b.total == doctest::Approx(0.7 * stat + 1.3 * dict + 2.0 * pres + 0.01 * tv).epsilon(1e-12));
  }

  SUBCASE("full-image TV scope") {
    AttackConfig c = config;
    c.tv_scope = TvScope::kFullImage;
    Rng rng(8);
    const auto noisy = oracle::random_image(rng, 16, 16);
    const auto adv = extract_features(*enc, noisy, c.layers);
    const auto roi_b = composite_loss(config, adv, clean, part, noisy, mask);
    const auto full_b = composite_loss(c, adv, clean, part, noisy, mask);
    CHECK(full_b.tv > roi_b.tv);
    CHECK(full_b.tv == doctest::Approx(oracle::tv(noisy, PixelMask::full(16, 16).bits())).epsilon(1e-12));
  }
}
