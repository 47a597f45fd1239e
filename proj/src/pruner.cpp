#include "dfl/pruner.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <string>

namespace dfl {

ModelSpec::ModelSpec(std::vector<int> layer_channels) : channels_(std::move(layer_channels)) {
  if (channels_.size() < 2) throw std::invalid_argument("model spec: need at least two channel counts");
  for (int d : channels_) {
    if (d < 1) throw std::invalid_argument("model spec: channel counts must be >= 1");
  }
  for (int z = 0; z < layer_count(); ++z) {
    offsets_.push_back(total_);
    counts_.push_back(static_cast<std::size_t>(channels_[z]) * channels_[z + 1]);
    total_ += counts_.back();
  }
}

LayerFullyPruned::LayerFullyPruned(int layer, double eta)
    : std::invalid_argument("build_plan: eta " + std::to_string(eta) + " removes every channel of layer " +
                            std::to_string(layer)),
      layer_(layer) {}

double eta_from_retention(double r) {
  if (!(r > 0.0) || r > 1.0) throw std::invalid_argument("eta_from_retention: r must lie in (0, 1]");
  return std::sqrt(r);
}

PruningPlan build_plan(const ModelSpec& spec, double eta) {
  if (!(eta > 0.0) || eta > 1.0) throw std::invalid_argument("build_plan: eta must lie in (0, 1]");
  const auto& delta = spec.layer_channels();
  PruningPlan plan;
  plan.eta = eta;
  plan.retention = eta * eta;
  plan.indicator.assign(spec.total_params(), 0);
  for (int z = 0; z < spec.layer_count(); ++z) {
    const int in = static_cast<int>(std::floor(eta * delta[z]));
    const int out = static_cast<int>(std::floor(eta * delta[z + 1]));
    if (in < 1 || out < 1) throw LayerFullyPruned(z, eta);
    plan.kept_in.push_back(in);
    plan.kept_out.push_back(out);
    std::vector<std::uint8_t> gin(delta[z], 0);
    std::vector<std::uint8_t> gout(delta[z + 1], 0);
    for (int l = 0; l < in; ++l) gin[l] = 1;
    for (int l = 0; l < out; ++l) gout[l] = 1;
    const std::size_t base = spec.layer_offset(z);
    for (int row = 0; row < delta[z]; ++row) {
      for (int col = 0; col < delta[z + 1]; ++col) {
        plan.indicator[base + static_cast<std::size_t>(row) * delta[z + 1] + col] = gin[row] & gout[col];
      }
    }
    plan.retained_count += static_cast<std::size_t>(in) * out;
    plan.input_mask.push_back(std::move(gin));
    plan.output_mask.push_back(std::move(gout));
  }
  plan.nominal_count = static_cast<std::size_t>(std::floor(plan.retention * static_cast<double>(spec.total_params())));
  return plan;
}

PruningPlan full_plan(const ModelSpec& spec) { return build_plan(spec, 1.0); }

std::vector<std::size_t> retained_positions(const PruningPlan& plan) {
  std::vector<std::size_t> out;
  out.reserve(plan.retained_count);
  for (std::size_t k = 0; k < plan.indicator.size(); ++k) {
    if (plan.indicator[k]) out.push_back(k);
  }
  return out;
}

Payload prune_payload(std::span<const double> model, const PruningPlan& plan, std::uint32_t client,
                      std::uint32_t round) {
  if (model.size() != plan.indicator.size()) throw std::invalid_argument("prune_payload: model length != K");
  Payload p;
  p.client = client;
  p.round = round;
  p.eta = plan.eta;
  p.values.reserve(plan.retained_count);
  for (std::size_t k = 0; k < model.size(); ++k) {
    if (plan.indicator[k]) p.values.push_back(model[k]);
  }
  return p;
}

void reconstruct(const Payload& payload, const ModelSpec& spec, std::span<double> out) {
  if (out.size() != spec.total_params()) throw std::invalid_argument("reconstruct: output length != K");
  const PruningPlan plan = build_plan(spec, payload.eta);
  if (payload.values.size() != plan.retained_count) {
    throw std::invalid_argument("reconstruct: payload count does not match the plan for its eta");
  }
  std::size_t next = 0;
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (plan.indicator[k]) out[k] = payload.values[next++];
  }
}

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& buf, T value) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  buf.insert(buf.end(), raw, raw + sizeof(T));
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t& offset) {
  if (offset + sizeof(T) > bytes.size()) throw std::invalid_argument("decode_payload: truncated buffer");
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, bytes.data() + offset, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  offset += sizeof(T);
  T value;
  std::memcpy(&value, raw, sizeof(T));
  return value;
}

}  // namespace

std::vector<std::uint8_t> encode_payload(const Payload& payload) {
  std::vector<std::uint8_t> buf;
  buf.reserve(24 + 8 * payload.values.size());
  put_le<std::uint32_t>(buf, payload.client);
  put_le<std::uint32_t>(buf, payload.round);
  put_le<double>(buf, payload.eta);
  put_le<std::uint64_t>(buf, payload.values.size());
  for (double v : payload.values) put_le<double>(buf, v);
  return buf;
}

Payload decode_payload(std::span<const std::uint8_t> bytes) {
  std::size_t offset = 0;
  Payload p;
  p.client = get_le<std::uint32_t>(bytes, offset);
  p.round = get_le<std::uint32_t>(bytes, offset);
  p.eta = get_le<double>(bytes, offset);
  const auto count = get_le<std::uint64_t>(bytes, offset);
  if (bytes.size() - offset != count * 8) throw std::invalid_argument("decode_payload: length does not match count");
  p.values.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) p.values.push_back(get_le<double>(bytes, offset));
  return p;
}

}  // namespace dfl
