#pragma once

#include "mixdiff/backend.hpp"
#include "mixdiff/types.hpp"

#include <memory>
#include <string>
#include <thread>

namespace mixdiff {

/// HTTP service wrapping a local model at exactly one access level. The
/// level is fixed at startup and never negotiable per request.
struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 0;  // 0 binds an ephemeral port
  AccessLevel access_level = AccessLevel::Probs;
  int max_batch = 256;
  double artificial_latency_ms = 0.0;  // test hook for client retry paths
};

/// Stateless JSON-over-HTTP model server.
///   GET  /v1/info     -> {"access_level","num_classes","dim","max_batch"}
///   POST /v1/predict  -> {"outputs": [[...]]} for {"inputs": [[...]], "level": "..."}
/// Errors: 400 malformed body, 403 access level denied, 413 batch too
/// large, 422 dimension mismatch.
class ModelServer {
 public:
  ModelServer(LinearSoftmaxModel model, ServerConfig cfg);
  ~ModelServer();

  ModelServer(const ModelServer&) = delete;
  ModelServer& operator=(const ModelServer&) = delete;

  /// Binds and serves on a background thread. Returns false if the port
  /// cannot be bound.
  bool start();

  /// Binds and serves on the calling thread until stop() is invoked.
  bool run();

  void stop();

  /// Resolved port (meaningful after start/run bound the socket).
  int port() const { return bound_port_; }
  const ServerConfig& config() const { return cfg_; }

 private:
  struct Impl;
  bool bind();

  std::unique_ptr<Impl> impl_;
  ServerConfig cfg_;
  int bound_port_ = -1;
  std::thread thread_;
};

}  // namespace mixdiff
