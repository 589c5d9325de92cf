#include "mixdiff/server.hpp"

#include "mixdiff/perturb.hpp"
#include "mixdiff/scoring.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>

namespace mixdiff {

namespace {

using json = nlohmann::ordered_json;

json error_body(const std::string& msg) {
  json obj;
  obj["error"] = msg;
  return obj;
}

}  // namespace

struct ModelServer::Impl {
  explicit Impl(LinearSoftmaxModel m) : backend(std::move(m)) {}

  LocalBackend backend;
  httplib::Server svr;
};

ModelServer::ModelServer(LinearSoftmaxModel model, ServerConfig cfg)
    : impl_(std::make_unique<Impl>(std::move(model))), cfg_(std::move(cfg)) {
  if (cfg_.max_batch < 1) throw Error("modelserver", "max batch must be positive");

  auto& svr = impl_->svr;
  svr.set_tcp_nodelay(true);

  // SO_REUSEADDR only. The library default adds SO_REUSEPORT, which would
  // let a second server bind an occupied port instead of failing fast.
  svr.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });

  svr.Get("/v1/info", [this](const httplib::Request&, httplib::Response& res) {
    json info;
    info["access_level"] = to_string(cfg_.access_level);
    info["num_classes"] = impl_->backend.num_classes();
    info["dim"] = impl_->backend.dim();
    info["max_batch"] = cfg_.max_batch;
    res.set_content(info.dump(), "application/json");
  });

  svr.Post("/v1/predict", [this](const httplib::Request& req, httplib::Response& res) {
    if (cfg_.artificial_latency_ms > 0.0) {
      std::this_thread::sleep_for(
          std::chrono::microseconds(static_cast<long>(cfg_.artificial_latency_ms * 1000.0)));
    }

    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception&) {
      res.status = 400;
      res.set_content(error_body("malformed request body").dump(), "application/json");
      return;
    }
    if (!body.is_object() || !body.contains("inputs") || !body.contains("level") ||
        !body["inputs"].is_array() || !body["level"].is_string()) {
      res.status = 400;
      res.set_content(error_body("request needs inputs and level").dump(), "application/json");
      return;
    }

    AccessLevel level;
    try {
      level = access_level_from_string(body["level"].get<std::string>());
    } catch (const Error&) {
      res.status = 400;
      res.set_content(error_body("unknown access level").dump(), "application/json");
      return;
    }
    // The configured level is fixed at startup and never negotiable.
    if (level != cfg_.access_level) {
      res.status = 403;
      res.set_content(error_body("access level denied").dump(), "application/json");
      return;
    }

    const auto& inputs = body["inputs"];
    if (static_cast<int>(inputs.size()) > cfg_.max_batch) {
      res.status = 413;
      res.set_content(error_body("batch exceeds max_batch").dump(), "application/json");
      return;
    }

    const int d = impl_->backend.dim();
    std::vector<FeatureVector> batch;
    batch.reserve(inputs.size());
    for (const auto& row : inputs) {
      if (!row.is_array() || static_cast<int>(row.size()) != d) {
        res.status = 422;
        res.set_content(error_body("input dimension mismatch").dump(), "application/json");
        return;
      }
      FeatureVector x(d);
      for (int i = 0; i < d; ++i) {
        if (!row[i].is_number()) {
          res.status = 422;
          res.set_content(error_body("inputs must be numeric").dump(), "application/json");
          return;
        }
        x[i] = row[i].get<double>();
      }
      if (!all_finite(x)) {
        res.status = 422;
        res.set_content(error_body("inputs must be finite").dump(), "application/json");
        return;
      }
      batch.push_back(std::move(x));
    }

    auto outputs = impl_->backend.predict(batch, level);
    json out_rows = json::array();
    for (const auto& o : outputs) {
      json row = json::array();
      for (Eigen::Index i = 0; i < o.values.size(); ++i) row.push_back(o.values[i]);
      out_rows.push_back(std::move(row));
    }
    json reply;
    reply["outputs"] = std::move(out_rows);
    res.set_content(reply.dump(), "application/json");
  });
}

ModelServer::~ModelServer() {
  stop();
  if (thread_.joinable()) thread_.join();
}

bool ModelServer::bind() {
  auto& svr = impl_->svr;
  if (cfg_.port == 0) {
    int p = svr.bind_to_any_port(cfg_.host);
    if (p <= 0) return false;
    bound_port_ = p;
  } else {
    if (!svr.bind_to_port(cfg_.host, cfg_.port)) return false;
    bound_port_ = cfg_.port;
  }
  return true;
}

bool ModelServer::start() {
  if (!bind()) return false;
  thread_ = std::thread([this]() { impl_->svr.listen_after_bind(); });
  while (!impl_->svr.is_running()) std::this_thread::yield();
  return true;
}

bool ModelServer::run() {
  if (!bind()) return false;
  return impl_->svr.listen_after_bind();
}

void ModelServer::stop() {
  if (impl_) impl_->svr.stop();
}

}  // namespace mixdiff
