#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "bcr/errors.hpp"
#include "bcr/metrics.hpp"
#include "oracles.hpp"

using namespace bcr;
using namespace bcr::metrics;

namespace {

CaptionObjectSet set(std::vector<std::string> phrases) { return make_object_set(phrases); }

class FixedEmbedder final : public TextEmbedder {
 public:
  std::vector<double> embed(const std::string& text) const override {
    if (text == "zero") return {0.0, 0.0};
    if (text == "up") return {0.0, 3.0};
    if (text == "down") return {0.0, -1.0};
    return {2.0, 0.0};
  }
};

// Direct SSIM: per window, Gaussian-weighted moments summed explicitly.
double ssim_direct(const ImageTensor& a, const ImageTensor& b) {
  const int win = 11, half = 5;
  const double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
  double wsum = 0.0;
  std::vector<double> w(win * win);
  for (int dy = 0; dy < win; ++dy)
    for (int dx = 0; dx < win; ++dx)
      wsum += w[dy * win + dx] = std::exp(-((dy - half) * (dy - half) + (dx - half) * (dx - half)) / (2 * sigma * sigma));
  for (double& v : w) v /= wsum;

  double total = 0.0;
  int count = 0;
  for (int ch = 0; ch < 3; ++ch) {
    double chan = 0.0;
    int n = 0;
    for (int y0 = 0; y0 + win <= a.height(); ++y0)
      for (int x0 = 0; x0 + win <= a.width(); ++x0) {
        double ma = 0, mb = 0;
        for (int dy = 0; dy < win; ++dy)
          for (int dx = 0; dx < win; ++dx) {
            ma += w[dy * win + dx] * a.at(ch, y0 + dy, x0 + dx);
            mb += w[dy * win + dx] * b.at(ch, y0 + dy, x0 + dx);
          }
        double va = 0, vb = 0, cov = 0;
        for (int dy = 0; dy < win; ++dy)
          for (int dx = 0; dx < win; ++dx) {
            const double da = a.at(ch, y0 + dy, x0 + dx) - ma, db = b.at(ch, y0 + dy, x0 + dx) - mb;
            va += w[dy * win + dx] * da * da;
            vb += w[dy * win + dx] * db * db;
            cov += w[dy * win + dx] * da * db;
          }
        chan += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++n;
      }
    total += chan / n;
    ++count;
  }
  return total / count;
}

}  // namespace

TEST_CASE("lexicon extraction") {
  const LexiconExtractor lex({"dog", "cat"});
  CHECK(lex.extract("A dog and two cats.").phrase_set() == std::set<std::string>{"dog", "cat"});
  CHECK(lex.extract("").empty());
  CHECK(lex.extract("Nothing to see here").empty());

  const LexiconExtractor salt({"salt shaker", "table", "shaker"});
  const auto s = salt.extract("a salt shaker on the table");
  CHECK(s.phrase_set() == std::set<std::string>{"salt shaker", "table"});
  CHECK(s.head_set() == std::set<std::string>{"shaker", "table"});
  CHECK(salt.extract("Two SALT Shakers!").phrase_set() == std::set<std::string>{"salt shaker"});
  CHECK(salt.extract("a shaker").phrase_set() == std::set<std::string>{"shaker"});
}

TEST_CASE("lexicon file and missing extractor") {
  const auto path = std::filesystem::temp_directory_path() / "bcr_test_lexicon.txt";
  {
    std::ofstream out(path);
    out << "# objects\n\ndog\n  fire hydrant\n";
  }
  const auto lex = LexiconExtractor::from_file(path);
  CHECK(lex.extract("a dog by the fire hydrant").phrases == std::vector<std::string>{"dog", "fire hydrant"});
  std::filesystem::remove(path);
  CHECK_THROWS_AS(LexiconExtractor::from_file(path), ExtractorUnavailable);
  CHECK_THROWS_AS(extract_objects("a dog", nullptr), ExtractorUnavailable);
}

TEST_CASE("head noun") {
  CHECK(head_noun("salt shaker") == "shaker");
  CHECK(head_noun("dog") == "dog");
  CHECK(head_noun("red fire hydrant") == "hydrant");
  CHECK(head_noun("  Fire   Hydrant ") == "hydrant");
  CHECK_THROWS_AS(head_noun("   "), EmptyPhraseError);
}

TEST_CASE("concealment success") {
  CHECK(concealment_success("dog", set({"dog", "ball"}), set({"ball"})) == 1);
  CHECK(concealment_success("dog", set({"cat"}), set({})) == 0);
  CHECK(concealment_success("dog", set({"dog"}), set({"dog"})) == 0);
  CHECK(concealment_success("Dog", set({"dog"}), set({})) == 1);
  // The phrase is gone but its head noun survives.
  CHECK(concealment_success("salt shaker", set({"salt shaker"}), set({"shaker"})) == 1);
  CHECK(concealment_success("salt shaker", set({"salt shaker"}), set({"shaker"}), MatchLevel::kHeadNoun) == 0);
}

TEST_CASE("global preservation") {
  CHECK(global_preservation(set({"a", "b", "c"}), set({"a", "b", "c"})) == 1.0);
  CHECK(global_preservation(set({"a", "b", "c"}), set({"a", "b", "x"})) == 2.0 / 3.0);
  CHECK(global_preservation(set({"a"}), set({})) == 0.0);
  CHECK_THROWS_AS(global_preservation(set({}), set({"a"})), UndefinedMetricError);
}

TEST_CASE("set metrics depend only on the sets") {
  const LexiconExtractor lex({"dog", "ball", "cat"});
  const auto c1 = lex.extract("A dog chases a ball."), c2 = lex.extract("Ball and dog, playing.");
  const auto a1 = lex.extract("Only a ball here."), a2 = lex.extract("A ball.");
  CHECK(concealment_success("dog", c1, a1) == concealment_success("dog", c2, a2));
  CHECK(global_preservation(c1, a1) == global_preservation(c2, a2));
}

TEST_CASE("global preservation is monotone as shared objects are added") {
  Rng rng(1);
  const std::vector<std::string> clean{"a", "b", "c", "d", "e"};
  for (int k = 0; k < 50; ++k) {
    std::vector<std::string> adv{"x"};
    double prev = global_preservation(set(clean), set(adv));
    for (int s = 0; s < 5; ++s) {
      adv.push_back(clean[static_cast<std::size_t>(rng.uniform_int(0, 4))]);
      const double now = global_preservation(set(clean), set(adv));
      CHECK(now >= prev);
      prev = now;
    }
  }
}

TEST_CASE("semantic drift") {
  const FixedEmbedder fixed;
  CHECK(semantic_drift("a", "a", &fixed) == 0.0);
  CHECK(semantic_drift("right", "up", &fixed) == 1.0);
  CHECK(semantic_drift("up", "down", &fixed) == 2.0);
  CHECK_THROWS_AS(semantic_drift("zero", "up", &fixed), ZeroVectorError);
  CHECK_THROWS_AS(semantic_drift("a", "b", nullptr), EmbedderUnavailable);

  const HashingEmbedder hashing;
  Rng rng(2);
  const std::vector<std::string> words{"dog", "grass", "tree", "cat", "table", "a", "on", "red"};
  for (int k = 0; k < 50; ++k) {
    std::string c;
    for (int i = rng.uniform_int(1, 8); i > 0; --i) c += words[static_cast<std::size_t>(rng.uniform_int(0, 7))] + " ";
    CHECK(semantic_drift(c, c, &hashing) == 0.0);
    const double d = semantic_drift(c, "A cat on a red table.", &hashing);
    CHECK(d >= 0.0);
    CHECK(d <= 2.0);
  }
}

TEST_CASE("ssim examples") {
  Rng rng(3);
  const auto a = oracle::random_image(rng, 12, 13);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  const double closed = (2 * 0 * 1 + 1e-4) / (0 + 1 + 1e-4);
  CHECK(std::abs(ssim(ImageTensor::filled(11, 11, 0.0), ImageTensor::filled(11, 11, 1.0)) - closed) <= 1e-6);
  CHECK_THROWS_AS(ssim(ImageTensor::filled(10, 20, 0.1), ImageTensor::filled(10, 20, 0.1)), TooSmallError);
  CHECK_THROWS_AS(ssim(a, ImageTensor::filled(12, 12, 0.1)), ShapeMismatch);
}

TEST_CASE("ssim matches the direct windowed computation") {
  Rng rng(4);
  for (int k = 0; k < 10; ++k) {
    const int h = rng.uniform_int(11, 18), w = rng.uniform_int(11, 18);
    const auto a = oracle::random_image(rng, h, w);
    std::vector<double> bd(a.data().begin(), a.data().end());
    for (double& v : bd) v = std::clamp(v + rng.uniform(-0.3, 0.3), 0.0, 1.0);
    const ImageTensor b(h, w, bd);
    CHECK(ssim(a, b) == doctest::Approx(ssim_direct(a, b)).epsilon(1e-10));
    CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-14));
  }
}

TEST_CASE("perceptual distance backend contract") {
  const RmsPixelBackend rms;
  Rng rng(5);
  for (int k = 0; k < 20; ++k) {
    const auto a = oracle::random_image(rng, 5, 6), b = oracle::random_image(rng, 5, 6);
    CHECK(perceptual_distance(a, a, &rms) == 0.0);
    CHECK(perceptual_distance(a, b, &rms) >= 0.0);
    CHECK(perceptual_distance(a, b, &rms) == perceptual_distance(b, a, &rms));
  }
  CHECK(rms.name() == "rms-pixel");
  CHECK(perceptual_distance(ImageTensor::filled(2, 2, 0.0), ImageTensor::filled(2, 2, 0.5), &rms) == 0.5);
  CHECK_THROWS_AS(perceptual_distance(ImageTensor::filled(2, 2, 0.0), ImageTensor::filled(2, 2, 0.0), nullptr),
                  BackendUnavailable);
}
