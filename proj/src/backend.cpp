#include "mixdiff/backend.hpp"

#include "mixdiff/perturb.hpp"
#include "mixdiff/scoring.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>

namespace mixdiff {

namespace {

using json = nlohmann::ordered_json;

[[noreturn]] void backend_error(const std::string& msg) { throw Error("backend", msg); }

}  // namespace

void LinearSoftmaxModel::validate() const {
  if (weights.rows() < 1 || weights.cols() < 1) backend_error("model has empty weights");
  if (bias.size() != weights.rows()) backend_error("bias length does not match class count");
  if (!weights.allFinite() || !all_finite(bias)) backend_error("model parameters must be finite");
}

void save_model(const LinearSoftmaxModel& model, const std::string& path) {
  model.validate();
  json obj;
  obj["W"] = json::array();
  for (Eigen::Index r = 0; r < model.weights.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < model.weights.cols(); ++c) row.push_back(model.weights(r, c));
    obj["W"].push_back(std::move(row));
  }
  obj["b"] = std::vector<double>(model.bias.data(), model.bias.data() + model.bias.size());
  obj["K"] = model.num_classes();
  obj["d"] = model.dim();
  std::ofstream out(path);
  if (!out) backend_error("cannot open '" + path + "' for writing");
  out << obj.dump(2) << "\n";
}

LinearSoftmaxModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) backend_error("cannot open model file '" + path + "'");
  json obj;
  try {
    in >> obj;
  } catch (const json::exception& e) {
    backend_error("malformed model file: " + std::string(e.what()));
  }
  if (!obj.contains("W") || !obj.contains("b") || !obj.contains("K") || !obj.contains("d"))
    backend_error("model file needs W, b, K and d");
  int k = obj["K"].get<int>();
  int d = obj["d"].get<int>();
  if (k < 1 || d < 1) backend_error("model dimensions must be positive");
  LinearSoftmaxModel model;
  model.weights.resize(k, d);
  model.bias.resize(k);
  if (static_cast<int>(obj["W"].size()) != k) backend_error("W row count does not match K");
  for (int r = 0; r < k; ++r) {
    const auto& row = obj["W"][r];
    if (static_cast<int>(row.size()) != d) backend_error("W column count does not match d");
    for (int c = 0; c < d; ++c) model.weights(r, c) = row[c].get<double>();
  }
  if (static_cast<int>(obj["b"].size()) != k) backend_error("b length does not match K");
  for (int r = 0; r < k; ++r) model.bias[r] = obj["b"][r].get<double>();
  model.validate();
  return model;
}

LocalBackend::LocalBackend(LinearSoftmaxModel model) : model_(std::move(model)) {
  model_.validate();
}

std::vector<ModelOutput> LocalBackend::predict(const std::vector<FeatureVector>& batch,
                                               AccessLevel level) const {
  std::vector<ModelOutput> out;
  out.reserve(batch.size());
  for (const auto& x : batch) {
    if (x.size() != model_.dim())
      backend_error("input dimension " + std::to_string(x.size()) +
                    " does not match model dimension " + std::to_string(model_.dim()));
    if (!all_finite(x)) backend_error("input has non-finite entries");
    switch (level) {
      case AccessLevel::Logits:
        out.push_back(ModelOutput::logits(model_.logits(x)));
        break;
      case AccessLevel::Probs:
        out.push_back(ModelOutput::probs(softmax(model_.logits(x))));
        break;
      case AccessLevel::Labels:
        out.push_back(one_hot(ModelOutput::logits(model_.logits(x))));
        break;
      case AccessLevel::Embeddings:
        // The linear model's representation map is the identity: inputs
        // already live in the embedding space.
        out.push_back(ModelOutput::embedding(x));
        break;
    }
  }
  return out;
}

double logistic_loss(const LinearSoftmaxModel& model, const LabeledDataset& data) {
  double loss = 0.0;
  int n = 0;
  for (const auto& r : data.records) {
    if (r.is_ood || !r.label) continue;
    Eigen::VectorXd l = model.logits(r.features);
    loss += logsumexp(l) - l[*r.label];
    ++n;
  }
  if (n == 0) backend_error("no labeled ID rows");
  return loss / n;
}

LinearSoftmaxModel fit_logistic(const LabeledDataset& data, int epochs, double learning_rate,
                                std::uint64_t seed) {
  (void)seed;  // zero initialization and full-batch descent need no randomness
  if (epochs < 1) backend_error("epochs must be positive");
  if (learning_rate < 0.0) backend_error("learning rate must be nonnegative");

  std::vector<const DatasetRecord*> rows;
  int num_classes = data.num_classes();
  for (const auto& r : data.records)
    if (!r.is_ood && r.label) rows.push_back(&r);
  if (rows.empty()) backend_error("no labeled ID rows to fit on");

  bool multi_class = false;
  for (const auto* r : rows)
    if (*r->label != *rows.front()->label) multi_class = true;
  if (!multi_class || num_classes < 2)
    backend_error("logistic fit needs at least two classes");

  const int n = static_cast<int>(rows.size());
  const int d = data.dim;
  Eigen::MatrixXd x(n, d);
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) {
    x.row(i) = rows[i]->features.transpose();
    y[i] = *rows[i]->label;
  }

  LinearSoftmaxModel model;
  model.weights = Eigen::MatrixXd::Zero(num_classes, d);
  model.bias = Eigen::VectorXd::Zero(num_classes);

  auto loss_of = [&](const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd l = w * x.row(i).transpose() + b;
      loss += logsumexp(l) - l[y[i]];
    }
    return loss / n;
  };

  double lr = learning_rate;
  double prev_loss = loss_of(model.weights, model.bias);
  for (int epoch = 0; epoch < epochs && lr > 0.0; ++epoch) {
    Eigen::MatrixXd grad_w = Eigen::MatrixXd::Zero(num_classes, d);
    Eigen::VectorXd grad_b = Eigen::VectorXd::Zero(num_classes);
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd p = softmax(model.weights * x.row(i).transpose() + model.bias);
      p[y[i]] -= 1.0;
      grad_w += p * x.row(i);
      grad_b += p;
    }
    grad_w /= n;
    grad_b /= n;

    // Backtrack if a step would raise the loss; keeps the per-epoch loss
    // non-increasing within 1e-6.
    for (;;) {
      Eigen::MatrixXd w_next = model.weights - lr * grad_w;
      Eigen::VectorXd b_next = model.bias - lr * grad_b;
      double next_loss = loss_of(w_next, b_next);
      if (next_loss <= prev_loss + 1e-6) {
        model.weights = std::move(w_next);
        model.bias = std::move(b_next);
        prev_loss = next_loss;
        break;
      }
      lr *= 0.5;
      if (lr < 1e-12) {
        lr = 0.0;  // early stop
        break;
      }
    }
  }

  model.validate();
  return model;
}

FeatureVector grad_input(const LinearSoftmaxModel& model, const FeatureVector& x, GradLoss loss) {
  if (x.size() != model.dim()) backend_error("input dimension does not match model");
  Eigen::VectorXd p = softmax(model.logits(x));
  const int k = model.num_classes();
  Eigen::VectorXd g_logits(k);
  if (loss == GradLoss::CEUniform) {
    // L = -(1/K) sum_k log p_k; dL/dl_j = p_j - 1/K
    g_logits = p.array() - 1.0 / k;
  } else {
    // H = -sum p log p; dH/dl_j = -p_j (log p_j + H)
    double h = entropy(p);
    for (int j = 0; j < k; ++j) {
      double lp = p[j] > 0.0 ? std::log(p[j]) : 0.0;
      g_logits[j] = -p[j] * (lp + h);
    }
  }
  return model.weights.transpose() * g_logits;
}

}  // namespace mixdiff
