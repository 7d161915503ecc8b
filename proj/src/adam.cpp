#include "handsyn/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "handsyn/simd.hpp"

namespace handsyn::diff {

AdamState AdamState::init(std::span<const Mat> params, std::span<const double> learning_rates,
                          AdamOptions options) {
  if (params.size() != learning_rates.size())
    throw std::invalid_argument("AdamState::init: " + std::to_string(params.size()) +
                                " parameter blocks but " + std::to_string(learning_rates.size()) +
                                " learning rates");
  AdamState s;
  s.options = options;
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.first_moment.emplace_back(params[i].rows(), params[i].cols());
    s.second_moment.emplace_back(params[i].rows(), params[i].cols());
    s.learning_rate.push_back(learning_rates[i]);
  }
  return s;
}

void adam_step(AdamState& state, std::span<Mat> params, std::span<const Mat> grads) {
  if (params.size() != state.first_moment.size() || grads.size() != params.size())
    throw std::invalid_argument("adam_step: expected " + std::to_string(state.first_moment.size()) +
                                " blocks, got " + std::to_string(params.size()) + " params and " +
                                std::to_string(grads.size()) + " grads");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].same_shape(state.first_moment[i]) || !grads[i].same_shape(params[i]))
      throw std::invalid_argument("adam_step: block " + std::to_string(i) + " shape mismatch (param " +
                                  params[i].shape_string() + ", grad " + grads[i].shape_string() +
                                  ", state " + state.first_moment[i].shape_string() + ")");
  }
  state.step += 1;
  const auto& o = state.options;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  const auto& k = simd::kernels();
  for (std::size_t i = 0; i < params.size(); ++i) {
    k.adam_update(params[i].size(), params[i].data(), grads[i].data(),
                  state.first_moment[i].data(), state.second_moment[i].data(),
                  state.learning_rate[i], o.beta1, o.beta2, o.eps, c1, c2);
  }
}

}  // namespace handsyn::diff
