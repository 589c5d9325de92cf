#include "mixdiff/remote.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <mutex>

namespace mixdiff {

namespace {

using json = nlohmann::json;

[[noreturn]] void remote_error(const std::string& msg) { throw Error("backend", msg); }

}  // namespace

// One keep-alive connection guarded by a mutex; concurrent predict calls
// from the engine serialize here.
struct RemoteBackend::Impl {
  explicit Impl(const RemoteConfig& cfg) : client(cfg.url) {
    auto whole = std::chrono::duration<double>(cfg.timeout_sec);
    auto sec = std::chrono::duration_cast<std::chrono::seconds>(whole);
    auto usec = std::chrono::duration_cast<std::chrono::microseconds>(whole - sec);
    client.set_connection_timeout(sec.count(), usec.count());
    client.set_read_timeout(sec.count(), usec.count());
    client.set_write_timeout(sec.count(), usec.count());
    client.set_keep_alive(true);
    client.set_tcp_nodelay(true);
  }

  httplib::Client client;
  std::mutex mutex;
};

RemoteBackend::RemoteBackend(RemoteConfig cfg)
    : cfg_(std::move(cfg)), impl_(std::make_unique<Impl>(cfg_)) {
  auto res = impl_->client.Get("/v1/info");
  if (!res) remote_error("cannot reach model server at " + cfg_.url);
  if (res->status != 200)
    remote_error("model server info failed with HTTP " + std::to_string(res->status));
  json info;
  try {
    info = json::parse(res->body);
  } catch (const json::exception&) {
    remote_error("malformed response from /v1/info");
  }
  try {
    level_ = access_level_from_string(info.at("access_level").get<std::string>());
    dim_ = info.at("dim").get<int>();
    num_classes_ = info.at("num_classes").get<int>();
    max_batch_ = info.at("max_batch").get<int>();
  } catch (const json::exception&) {
    remote_error("malformed response from /v1/info");
  }
  if (dim_ < 1 || num_classes_ < 1 || max_batch_ < 1)
    remote_error("model server reported invalid dimensions");
}

RemoteBackend::~RemoteBackend() = default;

std::vector<ModelOutput> RemoteBackend::predict(const std::vector<FeatureVector>& batch,
                                                AccessLevel level) const {
  if (level != level_)
    remote_error("access level denied: server serves " + to_string(level_) + ", requested " +
                 to_string(level));
  if (batch.empty()) return {};

  OutputKind kind = OutputKind::Logits;
  switch (level) {
    case AccessLevel::Logits: kind = OutputKind::Logits; break;
    case AccessLevel::Probs: kind = OutputKind::Probs; break;
    case AccessLevel::Labels: kind = OutputKind::LabelOneHot; break;
    case AccessLevel::Embeddings: kind = OutputKind::Embedding; break;
  }

  std::vector<ModelOutput> outputs;
  outputs.reserve(batch.size());

  // Requests over the server's batch limit are split transparently.
  for (std::size_t begin = 0; begin < batch.size(); begin += max_batch_) {
    std::size_t end = std::min(batch.size(), begin + max_batch_);

    json body;
    body["level"] = to_string(level);
    json rows = json::array();
    for (std::size_t i = begin; i < end; ++i) {
      const auto& x = batch[i];
      if (x.size() != dim_) remote_error("input dimension does not match the remote model");
      json row = json::array();
      for (Eigen::Index j = 0; j < x.size(); ++j) row.push_back(x[j]);
      rows.push_back(std::move(row));
    }
    body["inputs"] = std::move(rows);
    const std::string payload = body.dump();

    httplib::Result res;
    {
      std::lock_guard<std::mutex> lock(impl_->mutex);
      for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
        res = impl_->client.Post("/v1/predict", payload, "application/json");
        if (res) break;  // transport succeeded (any HTTP status)
        auto err = res.error();
        bool retryable = err == httplib::Error::ConnectionTimeout ||
                         err == httplib::Error::Read || err == httplib::Error::Write ||
                         err == httplib::Error::Connection;
        if (!retryable) break;
      }
    }
    if (!res) remote_error("request to " + cfg_.url + " failed after retries");
    if (res->status == 403) remote_error("access level denied");
    if (res->status != 200)
      remote_error("predict failed with HTTP " + std::to_string(res->status));

    json reply;
    try {
      reply = json::parse(res->body);
    } catch (const json::exception&) {
      remote_error("malformed response from /v1/predict");
    }
    if (!reply.contains("outputs") || !reply["outputs"].is_array() ||
        reply["outputs"].size() != end - begin)
      remote_error("malformed response from /v1/predict");

    for (const auto& row : reply["outputs"]) {
      if (!row.is_array() || row.empty()) remote_error("malformed output row");
      Eigen::VectorXd v(row.size());
      for (std::size_t j = 0; j < row.size(); ++j) {
        if (!row[j].is_number()) remote_error("malformed output row");
        v[static_cast<Eigen::Index>(j)] = row[j].get<double>();
      }
      ModelOutput out;
      out.kind = kind;
      out.values = std::move(v);
      out.validate();
      outputs.push_back(std::move(out));
    }
  }
  return outputs;
}

}  // namespace mixdiff
