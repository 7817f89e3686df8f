#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "bcr/errors.hpp"
#include "bcr/rng.hpp"
#include "bcr/roi.hpp"
#include "oracles.hpp"

using namespace bcr;

namespace {

// Brute force: token t = 1 + r * cols + c overlaps the ROI iff some pixel of
// its patch lies in some box.
std::vector<int> roi_tokens_oracle(const RoiSpec& roi, int h, int w, int p) {
  std::vector<int> out;
  for (int r = 0; r < h / p; ++r)
    for (int c = 0; c < w / p; ++c) {
      bool hit = false;
      for (int y = r * p; y < (r + 1) * p && !hit; ++y)
        for (int x = c * p; x < (c + 1) * p && !hit; ++x) hit = oracle::in_any_box(roi, y, x);
      if (hit) out.push_back(1 + r * (w / p) + c);
    }
  return out;
}

RoiSpec random_roi(Rng& rng, int h, int w) {
  RoiSpec roi;
  for (int b = rng.uniform_int(1, 3); b > 0; --b) roi.boxes.push_back(oracle::random_box(rng, h, w));
  return roi;
}

}  // namespace

TEST_CASE("pixel mask examples") {
  const auto full = build_pixel_mask(RoiSpec{{Box{0, 0, 5, 3}}}, 3, 5);
  CHECK(full.count() == 15);
  CHECK(full.coverage() == 1.0);

  const auto quarter = build_pixel_mask(RoiSpec{{Box{0, 0, 2, 2}}}, 4, 4);
  CHECK(quarter.count() == 4);
  CHECK(quarter.coverage() == 0.25);

  const RoiSpec two{{Box{0, 0, 2, 2}, Box{1, 1, 3, 3}}};
  const auto overlap = build_pixel_mask(two, 4, 4);
  int brute = 0;
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) brute += oracle::in_any_box(two, y, x);
  CHECK(brute == 7);
  CHECK(overlap.count() == 7);
}

TEST_CASE("pixel mask matches the brute-force union on random boxes") {
  Rng rng(21);
  for (int k = 0; k < 200; ++k) {
    const int h = rng.uniform_int(1, 20), w = rng.uniform_int(1, 20);
    const RoiSpec roi = random_roi(rng, h, w);
    const auto mask = build_pixel_mask(roi, h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) REQUIRE(mask.at(y, x) == oracle::in_any_box(roi, y, x));
  }
}

TEST_CASE("pixel mask is monotone under box union") {
  Rng rng(22);
  for (int k = 0; k < 100; ++k) {
    const RoiSpec a = random_roi(rng, 12, 12);
    RoiSpec ab = a;
    ab.boxes.push_back(oracle::random_box(rng, 12, 12));
    const auto ma = build_pixel_mask(a, 12, 12), mab = build_pixel_mask(ab, 12, 12);
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 12; ++x) REQUIRE((!ma.at(y, x) || mab.at(y, x)));
  }
}

TEST_CASE("pixel mask bounds errors") {
  CHECK_THROWS_AS(build_pixel_mask(RoiSpec{}, 4, 4), BoundsError);
  CHECK_THROWS_AS(build_pixel_mask(RoiSpec{{Box{0, 0, 5, 2}}}, 4, 4), BoundsError);
  CHECK_THROWS_AS(build_pixel_mask(RoiSpec{{Box{2, 2, 2, 3}}}, 4, 4), BoundsError);
}

TEST_CASE("partition examples") {
  const auto p = partition_tokens(RoiSpec{{Box{0, 0, 2, 2}}}, 4, 4, 2);
  CHECK(p.roi_indices == std::vector<int>{1});
  CHECK(p.background_indices == std::vector<int>{2, 3, 4});
  CHECK(p.cls_index == 0);
  CHECK(p.token_count() == 5);

  const RoiSpec straddle{{Box{1, 1, 3, 3}}};
  CHECK(roi_tokens_oracle(straddle, 4, 4, 2) == std::vector<int>{1, 2, 3, 4});
  CHECK(partition_tokens_unchecked(straddle, 4, 4, 2).roi_indices == std::vector<int>{1, 2, 3, 4});
  CHECK_THROWS_AS(partition_tokens(straddle, 4, 4, 2), EmptyBackgroundError);

  const auto p8 = partition_tokens(RoiSpec{{Box{0, 0, 2, 2}}}, 8, 8, 2);
  CHECK(p8.roi_indices == std::vector<int>{1});
  CHECK(p8.background_indices.size() == 15);
}

TEST_CASE("partition geometry errors") {
  CHECK_THROWS_AS(partition_tokens(RoiSpec{{Box{0, 0, 2, 2}}}, 5, 4, 2), GeometryError);
  CHECK_THROWS_AS(partition_tokens(RoiSpec{{Box{0, 0, 2, 2}}}, 4, 4, 0), GeometryError);
  CHECK_THROWS_AS(partition_tokens(RoiSpec{{Box{0, 0, 9, 2}}}, 8, 8, 2), BoundsError);
}

TEST_CASE("partition is exhaustive, disjoint and matches the brute-force rule") {
  Rng rng(23);
  int checked = 0;
  for (int k = 0; k < 300; ++k) {
    const int p = rng.uniform_int(1, 4);
    const int h = p * rng.uniform_int(2, 6), w = p * rng.uniform_int(2, 6);
    const RoiSpec roi = random_roi(rng, h, w);
    const auto part = partition_tokens_unchecked(roi, h, w, p);
    CHECK(part.roi_indices == roi_tokens_oracle(roi, h, w, p));
    std::vector<int> all = part.roi_indices;
    all.insert(all.end(), part.background_indices.begin(), part.background_indices.end());
    std::sort(all.begin(), all.end());
    std::vector<int> expected(static_cast<std::size_t>((h / p) * (w / p)));
    std::iota(expected.begin(), expected.end(), 1);
    REQUIRE(all == expected);
    ++checked;
  }
  CHECK(checked == 300);
}

TEST_CASE("shrinking a box never adds ROI tokens") {
  Rng rng(24);
  for (int k = 0; k < 200; ++k) {
    const Box big = oracle::random_box(rng, 12, 12);
    Box small = big;
    small.x_min = rng.uniform_int(big.x_min, big.x_max - 1);
    small.y_min = rng.uniform_int(big.y_min, big.y_max - 1);
    small.x_max = rng.uniform_int(small.x_min + 1, big.x_max);
    small.y_max = rng.uniform_int(small.y_min + 1, big.y_max);
    const auto pb = partition_tokens_unchecked(RoiSpec{{big}}, 12, 12, 3).roi_indices;
    const auto ps = partition_tokens_unchecked(RoiSpec{{small}}, 12, 12, 3).roi_indices;
    const std::set<int> sb(pb.begin(), pb.end());
    for (int t : ps) REQUIRE(sb.count(t) == 1);
  }
}

TEST_CASE("overlap threshold") {
  // Box covers one full patch and half of its right neighbour.
  const RoiSpec roi{{Box{0, 0, 3, 2}}};
  CHECK(partition_tokens(roi, 4, 4, 2).roi_indices == std::vector<int>{1, 2});
  CHECK(partition_tokens(roi, 4, 4, 2, 0.5).roi_indices == std::vector<int>{1, 2});
  CHECK(partition_tokens(roi, 4, 4, 2, 0.75).roi_indices == std::vector<int>{1});
  CHECK(partition_tokens(roi, 4, 4, 2, 0.75).background_indices == std::vector<int>{2, 3, 4});
  CHECK_THROWS_AS(partition_tokens(RoiSpec{{Box{0, 0, 1, 1}}}, 4, 4, 2, 0.5), BoundsError);
}
