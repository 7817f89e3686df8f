#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "bcr/metrics.hpp"

namespace bcr::grounding {

inline constexpr double kDefaultThreshold = 0.3;
inline constexpr int kDefaultConcurrency = 4;
inline constexpr const char* kEndpointEnvVar = "GROUNDING_ENDPOINT";

struct Detection {
  std::array<double, 4> box{};  // x_min, y_min, x_max, y_max
  double confidence = 0.0;

  bool operator==(const Detection&) const = default;
};

struct GroundingQuery {
  std::string image_ref;
  std::string phrase;
  double threshold = kDefaultThreshold;
};

struct GroundingVerdict {
  std::string phrase;
  bool detected = false;
  double max_confidence = 0.0;
  std::vector<Detection> boxes;
};

// Wire format shared by the HTTP client, the stub server and fixture files:
//   request  {"image": "<ref>", "phrase": "<text>"}
//   response {"detections": [{"box": [x0, y0, x1, y1], "confidence": c}, ...]}
nlohmann::json request_json(const std::string& image_ref, const std::string& phrase);
std::vector<Detection> parse_detections(const nlohmann::json& response);
nlohmann::json detections_json(const std::vector<Detection>& detections);

class GroundingClient {
 public:
  virtual ~GroundingClient() = default;
  // Throws GroundingServiceError on transport or protocol failure.
  virtual std::vector<Detection> query(const std::string& image_ref, const std::string& phrase) const = 0;
  virtual bool reentrant() const { return true; }
};

// POSTs the request JSON to a URL such as "http://host:port/ground".
class HttpGroundingClient final : public GroundingClient {
 public:
  explicit HttpGroundingClient(std::string endpoint, double timeout_seconds = 10.0);
  std::vector<Detection> query(const std::string& image_ref, const std::string& phrase) const override;
  const std::string& endpoint() const noexcept { return endpoint_; }

 private:
  std::string endpoint_;
  std::string origin_;
  std::string path_;
  double timeout_seconds_;
};

// Fixture-backed answers. File schema:
//   {"responses": [{"image": "<ref, optional>", "phrase": "...", "detections": [...]}, ...]}
// An entry with an image wins over an image-less entry for the same phrase;
// unknown phrases get no detections. Phrases marked "error": true fail.
class StubGroundingClient final : public GroundingClient {
 public:
  explicit StubGroundingClient(const nlohmann::json& fixture);
  static StubGroundingClient from_file(const std::filesystem::path& path);

  std::vector<Detection> query(const std::string& image_ref, const std::string& phrase) const override;

 private:
  struct Entry {
    std::vector<Detection> detections;
    bool fail = false;
  };
  std::map<std::pair<std::string, std::string>, Entry> by_image_;
  std::map<std::string, Entry> by_phrase_;
};

// HTTP server answering POST /ground from a StubGroundingClient. Runs on a
// background thread until destroyed.
class StubGroundingServer {
 public:
  StubGroundingServer(StubGroundingClient stub, const std::string& host = "127.0.0.1", int port = 0);
  ~StubGroundingServer();
  StubGroundingServer(const StubGroundingServer&) = delete;
  StubGroundingServer& operator=(const StubGroundingServer&) = delete;

  int port() const noexcept { return port_; }
  std::string endpoint() const;
  // Blocks the caller; for the CLI.
  void wait();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::string host_;
  int port_ = 0;
  std::thread thread_;
};

// O(c') \ O(c) on normalised phrases (or head nouns).
std::set<std::string> candidate_hallucinations(const metrics::CaptionObjectSet& clean,
                                               const metrics::CaptionObjectSet& adv,
                                               metrics::MatchLevel level = metrics::MatchLevel::kPhrase);

// Queries with the phrase's head noun. detected <=> some box has
// confidence > threshold (strict). Throws GroundingServiceError.
GroundingVerdict verify_object(const GroundingClient& client, const std::string& image_ref, const std::string& phrase,
                               double threshold = kDefaultThreshold);

// A verdict, or the reason the service could not produce one.
struct VerificationOutcome {
  std::string phrase;
  std::optional<GroundingVerdict> verdict;
  std::string error;
};

// Fans out up to `max_concurrency` queries at once (1 for non-reentrant
// clients). Results follow the order of `phrases`.
std::vector<VerificationOutcome> verify_all(const GroundingClient& client, const std::string& image_ref,
                                            const std::vector<std::string>& phrases,
                                            double threshold = kDefaultThreshold,
                                            int max_concurrency = kDefaultConcurrency);

struct HallucinationRate {
  double rate = 0.0;
  // Set when |O(c')| = 0 and the rate is reported as 0 by convention.
  bool degenerate = false;
};

// |{not detected}| / adv_object_count. Throws UnverifiableError if any
// outcome lacks a verdict.
HallucinationRate grounded_hallucination_rate(const std::vector<VerificationOutcome>& outcomes,
                                              std::size_t adv_object_count);
HallucinationRate grounded_hallucination_rate(const std::vector<GroundingVerdict>& verdicts,
                                              std::size_t adv_object_count);

// Runs the whole protocol for one image at either match level: candidates,
// verification of each, rate with |O(c')| at that level as the denominator.
struct GroundedEvaluation {
  std::set<std::string> candidates;
  std::vector<VerificationOutcome> outcomes;
  HallucinationRate rate;
};

GroundedEvaluation evaluate_grounded_hallucination(const GroundingClient& client, const std::string& image_ref,
                                                   const metrics::CaptionObjectSet& clean,
                                                   const metrics::CaptionObjectSet& adv, metrics::MatchLevel level,
                                                   double threshold = kDefaultThreshold,
                                                   int max_concurrency = kDefaultConcurrency);

}  // namespace bcr::grounding
