#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "aspectminer/encoder.hpp"
#include "aspectminer/random.hpp"

namespace aspectminer {

struct HeadConfig {
  int input_units = 768;
  int hidden_units = 128;
  int output_units = 2;
  double dropout_rate = 0.25;
  std::string init_scheme = "glorot-uniform";

  // Throws ConfigurationError unless output_units == 2, 0 <= dropout < 1 and
  // the init scheme is glorot-uniform.
  void validate() const;
  bool operator==(const HeadConfig&) const = default;
};

struct Prediction {
  double p_negative = 0.5;
  double p_positive = 0.5;
  bool positive = false;

  bool operator==(const Prediction&) const = default;
};

// Two-way softmax; the decision is positive only when p_positive > 0.5.
Prediction softmax_prediction(double logit_negative, double logit_positive);

enum class HeadMode { kTrain, kInfer };

struct HeadCache {
  std::vector<double> input, hidden, dropped, drop_mask;
  double logits[2] = {0, 0};
  Prediction prediction;
};

// dense(input -> hidden) + ReLU, dropout, dense(hidden -> 2), softmax.
// Parameters: dense1.weight [hidden, input], dense1.bias, dense2.weight
// [2, hidden], dense2.bias.
class Head {
 public:
  Head() = default;
  Head(HeadConfig cfg, std::vector<Parameter> params);

  // Glorot-uniform weights (bound sqrt(6 / (fan_in + fan_out))), zero biases.
  static Head build(const HeadConfig& cfg, std::uint64_t seed);

  const HeadConfig& config() const { return cfg_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::size_t parameter_count() const;

  // Throws NumericError on non-finite input. In train mode dropout draws
  // from rng (nullptr disables it).
  Prediction forward(std::span<const double> v, HeadMode mode, Rng* rng = nullptr, HeadCache* cache = nullptr) const;

  // Cross-entropy -log p[label] (times weight). Accumulates parameter
  // gradients and writes d(loss)/d(input) to d_input.
  double backward(const HeadCache& cache, int label, double weight, Gradients& grads,
                  std::vector<double>& d_input) const;

  Gradients zero_gradients() const;

 private:
  HeadConfig cfg_;
  std::vector<Parameter> params_;
};

}  // namespace aspectminer
