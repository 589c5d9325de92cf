#pragma once

#include "mixdiff/backend.hpp"
#include "mixdiff/types.hpp"

#include <memory>
#include <string>

namespace mixdiff {

struct RemoteConfig {
  std::string url;  // e.g. "http://127.0.0.1:8080"
  double timeout_sec = 5.0;
  int max_retries = 2;  // retries after the first attempt, timeouts only
};

/// Client for the /v1 model protocol. Fetches the server's access level,
/// dimensions and batch limit from /v1/info at construction; predict
/// requests larger than the server's max batch are split transparently.
class RemoteBackend : public Backend {
 public:
  explicit RemoteBackend(RemoteConfig cfg);
  ~RemoteBackend() override;

  int dim() const override { return dim_; }
  int num_classes() const override { return num_classes_; }
  bool supports(AccessLevel level) const override { return level == level_; }
  std::vector<ModelOutput> predict(const std::vector<FeatureVector>& batch,
                                   AccessLevel level) const override;
  std::string describe() const override { return "remote:" + cfg_.url; }

  AccessLevel level() const { return level_; }
  int max_batch() const { return max_batch_; }

 private:
  struct Impl;

  RemoteConfig cfg_;
  std::unique_ptr<Impl> impl_;
  AccessLevel level_ = AccessLevel::Probs;
  int dim_ = 0;
  int num_classes_ = 0;
  int max_batch_ = 0;
};

}  // namespace mixdiff
