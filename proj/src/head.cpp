#include "aspectminer/head.hpp"

#include <cmath>

#include "aspectminer/errors.hpp"

namespace aspectminer {

void HeadConfig::validate() const {
  if (output_units != 2) throw ConfigurationError("head output_units must be 2");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigurationError("head dropout_rate must be in [0, 1)");
  if (input_units <= 0 || hidden_units <= 0) throw ConfigurationError("head layer sizes must be positive");
  if (init_scheme != "glorot-uniform") throw ConfigurationError("unsupported head init scheme " + init_scheme);
}

Prediction softmax_prediction(double logit_negative, double logit_positive) {
  Prediction p;
  // Logistic form of the two-way softmax; exact for equal logits.
  const double d = logit_negative - logit_positive;
  if (d >= 0) {
    const double e = std::exp(-d);
    p.p_positive = e / (1.0 + e);
    p.p_negative = 1.0 / (1.0 + e);
  } else {
    const double e = std::exp(d);
    p.p_positive = 1.0 / (1.0 + e);
    p.p_negative = e / (1.0 + e);
  }
  p.positive = p.p_positive > 0.5;
  return p;
}

Head::Head(HeadConfig cfg, std::vector<Parameter> params) : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
  const auto in = static_cast<std::size_t>(cfg_.input_units);
  const auto hid = static_cast<std::size_t>(cfg_.hidden_units);
  const std::vector<std::vector<std::size_t>> shapes = {{hid, in}, {hid}, {2, hid}, {2}};
  const char* names[] = {"dense1.weight", "dense1.bias", "dense2.weight", "dense2.bias"};
  if (params_.size() != 4) throw ConfigurationError("head expects 4 tensors");
  for (std::size_t i = 0; i < 4; ++i) {
    std::size_t n = 1;
    for (auto d : shapes[i]) n *= d;
    if (params_[i].name != names[i] || params_[i].shape != shapes[i] || params_[i].value.size() != n) {
      throw ConfigurationError("head tensor " + params_[i].name + " does not match the head config");
    }
  }
}

Head Head::build(const HeadConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const auto in = static_cast<std::size_t>(cfg.input_units);
  const auto hid = static_cast<std::size_t>(cfg.hidden_units);
  auto glorot = [&](std::size_t fan_out, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> w(fan_out * fan_in);
    for (double& v : w) v = uniform_real(rng, -bound, bound);
    return w;
  };
  std::vector<Parameter> params;
  params.push_back({"dense1.weight", {hid, in}, glorot(hid, in)});
  params.push_back({"dense1.bias", {hid}, std::vector<double>(hid, 0.0)});
  params.push_back({"dense2.weight", {2, hid}, glorot(2, hid)});
  params.push_back({"dense2.bias", {2}, {0.0, 0.0}});
  return Head(cfg, std::move(params));
}

std::size_t Head::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

Gradients Head::zero_gradients() const {
  Gradients g;
  for (const auto& p : params_) g.emplace_back(p.value.size(), 0.0);
  return g;
}

Prediction Head::forward(std::span<const double> v, HeadMode mode, Rng* rng, HeadCache* cache) const {
  const auto in = static_cast<std::size_t>(cfg_.input_units);
  const auto hid = static_cast<std::size_t>(cfg_.hidden_units);
  if (v.size() != in) {
    throw UsageError("head expects a " + std::to_string(in) + "-vector, got " + std::to_string(v.size()));
  }
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError("head input contains a non-finite value");
  }
  const auto& w1 = params_[0].value;
  const auto& b1 = params_[1].value;
  const auto& w2 = params_[2].value;
  const auto& b2 = params_[3].value;

  std::vector<double> hidden(hid);
  for (std::size_t o = 0; o < hid; ++o) {
    double s = b1[o];
    const double* row = w1.data() + o * in;
    for (std::size_t i = 0; i < in; ++i) s += row[i] * v[i];
    hidden[o] = s > 0.0 ? s : 0.0;
  }
  std::vector<double> dropped = hidden;
  std::vector<double> mask;
  if (mode == HeadMode::kTrain && rng != nullptr && cfg_.dropout_rate > 0.0) {
    mask.resize(hid);
    const double keep = 1.0 / (1.0 - cfg_.dropout_rate);
    for (std::size_t o = 0; o < hid; ++o) {
      mask[o] = uniform_unit(*rng) < cfg_.dropout_rate ? 0.0 : keep;
      dropped[o] *= mask[o];
    }
  }
  double logits[2];
  for (std::size_t c = 0; c < 2; ++c) {
    double s = b2[c];
    for (std::size_t o = 0; o < hid; ++o) s += w2[c * hid + o] * dropped[o];
    logits[c] = s;
  }
  const Prediction p = softmax_prediction(logits[0], logits[1]);
  if (cache != nullptr) {
    cache->input.assign(v.begin(), v.end());
    cache->hidden = std::move(hidden);
    cache->dropped = std::move(dropped);
    cache->drop_mask = std::move(mask);
    cache->logits[0] = logits[0];
    cache->logits[1] = logits[1];
    cache->prediction = p;
  }
  return p;
}

double Head::backward(const HeadCache& c, int label, double weight, Gradients& grads,
                      std::vector<double>& d_input) const {
  const auto in = static_cast<std::size_t>(cfg_.input_units);
  const auto hid = static_cast<std::size_t>(cfg_.hidden_units);
  const auto& w1 = params_[0].value;
  const auto& w2 = params_[2].value;
  const double probs[2] = {c.prediction.p_negative, c.prediction.p_positive};
  // log-sum-exp keeps the loss finite when the label probability underflows.
  const double mx = std::max(c.logits[0], c.logits[1]);
  const double lse = mx + std::log(std::exp(c.logits[0] - mx) + std::exp(c.logits[1] - mx));
  const double loss = weight * (lse - c.logits[label]);

  double dlogits[2];
  for (int k = 0; k < 2; ++k) dlogits[k] = weight * (probs[k] - (k == label ? 1.0 : 0.0));

  std::vector<double> dh(hid, 0.0);
  for (std::size_t k = 0; k < 2; ++k) {
    grads[3][k] += dlogits[k];
    for (std::size_t o = 0; o < hid; ++o) {
      grads[2][k * hid + o] += dlogits[k] * c.dropped[o];
      dh[o] += dlogits[k] * w2[k * hid + o];
    }
  }
  for (std::size_t o = 0; o < hid; ++o) {
    if (!c.drop_mask.empty()) dh[o] *= c.drop_mask[o];
    if (c.hidden[o] <= 0.0) dh[o] = 0.0;
  }
  d_input.assign(in, 0.0);
  for (std::size_t o = 0; o < hid; ++o) {
    if (dh[o] == 0.0) continue;
    grads[1][o] += dh[o];
    double* grow = grads[0].data() + o * in;
    const double* wrow = w1.data() + o * in;
    for (std::size_t i = 0; i < in; ++i) {
      grow[i] += dh[o] * c.input[i];
      d_input[i] += dh[o] * wrow[i];
    }
  }
  return loss;
}

}  // namespace aspectminer
