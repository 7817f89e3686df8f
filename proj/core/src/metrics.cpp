#include "bcr/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "bcr/errors.hpp"

namespace bcr::metrics {

namespace {

std::vector<std::string> word_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char ch : text) {
    if (std::isalnum(ch)) {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

std::set<std::string> level_set(const CaptionObjectSet& s, MatchLevel level) {
  return level == MatchLevel::kPhrase ? s.phrase_set() : s.head_set();
}

}  // namespace

std::string normalize_phrase(const std::string& phrase) {
  std::istringstream in(phrase);
  std::vector<std::string> words;
  for (std::string w; in >> w;) {
    std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    words.push_back(std::move(w));
  }
  return join(words);
}

std::string head_noun(const std::string& phrase) {
  const std::string norm = normalize_phrase(phrase);
  if (norm.empty()) throw EmptyPhraseError("head_noun: empty phrase");
  const auto pos = norm.rfind(' ');
  return pos == std::string::npos ? norm : norm.substr(pos + 1);
}

CaptionObjectSet make_object_set(const std::vector<std::string>& phrases, std::string caption) {
  CaptionObjectSet out;
  out.source_caption = std::move(caption);
  for (const auto& p : phrases) {
    std::string norm = normalize_phrase(p);
    if (norm.empty() || std::find(out.phrases.begin(), out.phrases.end(), norm) != out.phrases.end()) continue;
    out.head_nouns.push_back(head_noun(norm));
    out.phrases.push_back(std::move(norm));
  }
  return out;
}

LexiconExtractor::LexiconExtractor(std::vector<std::string> vocabulary) {
  for (const auto& phrase : vocabulary) {
    auto words = word_tokens(phrase);
    if (!words.empty()) entries_.push_back(std::move(words));
  }
  // Longest phrases first so "salt shaker" wins over "shaker".
  std::stable_sort(entries_.begin(), entries_.end(),
                   [](const auto& a, const auto& b) { return a.size() > b.size(); });
}

LexiconExtractor LexiconExtractor::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ExtractorUnavailable("cannot open lexicon file " + path.string());
  std::vector<std::string> vocab;
  for (std::string line; std::getline(in, line);) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    vocab.push_back(line);
  }
  return LexiconExtractor(std::move(vocab));
}

CaptionObjectSet LexiconExtractor::extract(const std::string& caption) const {
  const auto tokens = word_tokens(caption);
  std::vector<std::string> found;
  std::size_t i = 0;
  while (i < tokens.size()) {
    std::size_t matched = 0;
    for (const auto& entry : entries_) {
      if (i + entry.size() > tokens.size()) continue;
      bool ok = true;
      for (std::size_t k = 0; k < entry.size() && ok; ++k) {
        const std::string& tok = tokens[i + k];
        const bool last = k + 1 == entry.size();
        ok = tok == entry[k] || (last && tok == entry[k] + "s");
      }
      if (ok) {
        found.push_back(join(entry));
        matched = entry.size();
        break;
      }
    }
    i += matched ? matched : 1;
  }
  return make_object_set(found, caption);
}

CaptionObjectSet extract_objects(const std::string& caption, const ObjectExtractor* extractor) {
  if (extractor == nullptr) throw ExtractorUnavailable("no object extractor configured");
  return extractor->extract(caption);
}

int concealment_success(const std::string& target, const CaptionObjectSet& clean, const CaptionObjectSet& adv,
                        MatchLevel level) {
  const std::string key = level == MatchLevel::kPhrase ? normalize_phrase(target) : head_noun(target);
  const auto c = level_set(clean, level);
  const auto a = level_set(adv, level);
  return c.count(key) == 1 && a.count(key) == 0 ? 1 : 0;
}

double global_preservation(const CaptionObjectSet& clean, const CaptionObjectSet& adv, MatchLevel level) {
  const auto c = level_set(clean, level);
  if (c.empty()) throw UndefinedMetricError("global preservation is undefined for an empty clean object set");
  const auto a = level_set(adv, level);
  std::size_t kept = 0;
  for (const auto& o : c) kept += a.count(o);
  return static_cast<double>(kept) / static_cast<double>(c.size());
}

std::vector<double> HashingEmbedder::embed(const std::string& text) const {
  std::vector<double> v(dimension_, 0.0);
  for (const auto& tok : word_tokens(text)) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : tok) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
    v[h % dimension_] += (h >> 63) ? -1.0 : 1.0;
  }
  return v;
}

double semantic_drift(const std::string& caption_clean, const std::string& caption_adv, const TextEmbedder* embedder) {
  if (embedder == nullptr) throw EmbedderUnavailable("no text embedder configured");
  if (caption_clean == caption_adv) return 0.0;
  const auto a = embedder->embed(caption_clean);
  const auto b = embedder->embed(caption_adv);
  if (a.size() != b.size()) throw ShapeMismatch("embedder returned vectors of different lengths");
  double dot = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw ZeroVectorError("caption embedding has zero norm");
  const double cosine = dot / std::sqrt(aa * bb);
  return std::clamp(1.0 - cosine, 0.0, 2.0);
}

double RmsPixelBackend::distance(const ImageTensor& a, const ImageTensor& b) const {
  if (a.height() != b.height() || a.width() != b.width()) throw ShapeMismatch("perceptual distance: shapes differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(a.size()));
}

double perceptual_distance(const ImageTensor& a, const ImageTensor& b, const PerceptualBackend* backend) {
  if (backend == nullptr) throw BackendUnavailable("no perceptual distance backend configured");
  return backend->distance(a, b);
}

}  // namespace bcr::metrics
