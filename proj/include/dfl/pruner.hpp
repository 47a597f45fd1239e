#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace dfl {

// Layer layout of a model: layer z is a delta[z] x delta[z+1] weight grid,
// flattened layer by layer, input-channel-major within a layer.
class ModelSpec {
 public:
  ModelSpec() = default;
  explicit ModelSpec(std::vector<int> layer_channels);

  const std::vector<int>& layer_channels() const { return channels_; }
  int layer_count() const { return static_cast<int>(channels_.size()) - 1; }
  std::size_t layer_param_count(int layer) const { return counts_.at(layer); }
  std::size_t layer_offset(int layer) const { return offsets_.at(layer); }
  std::size_t total_params() const { return total_; }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;

 private:
  std::vector<int> channels_;
  std::vector<std::size_t> counts_;
  std::vector<std::size_t> offsets_;
  std::size_t total_ = 0;
};

class LayerFullyPruned : public std::invalid_argument {
 public:
  LayerFullyPruned(int layer, double eta);
  int layer() const { return layer_; }

 private:
  int layer_;
};

struct PruningPlan {
  double eta = 1.0;
  double retention = 1.0;  // eta^2
  std::vector<int> kept_in;   // floor(eta * delta[z]) per layer
  std::vector<int> kept_out;  // floor(eta * delta[z+1]) per layer
  std::vector<std::vector<std::uint8_t>> input_mask;
  std::vector<std::vector<std::uint8_t>> output_mask;
  std::vector<std::uint8_t> indicator;  // length K, flattening order
  std::size_t retained_count = 0;
  std::size_t nominal_count = 0;  // floor(r K)
};

double eta_from_retention(double r);

PruningPlan build_plan(const ModelSpec& spec, double eta);
// All-ones plan (a client's own model is never pruned).
PruningPlan full_plan(const ModelSpec& spec);

// Flattened indices with indicator 1, ascending. This is also payload order.
std::vector<std::size_t> retained_positions(const PruningPlan& plan);

struct Payload {
  std::uint32_t client = 0;
  std::uint32_t round = 0;
  double eta = 1.0;
  std::vector<double> values;
};

Payload prune_payload(std::span<const double> model, const PruningPlan& plan, std::uint32_t client = 0,
                      std::uint32_t round = 0);

// Places payload values at their original indices; positions are rebuilt from
// (spec, eta). Entries not carried by the payload are left untouched in out.
void reconstruct(const Payload& payload, const ModelSpec& spec, std::span<double> out);

// Wire format: u32 client, u32 round, f64 eta, u64 count, then count f64
// values. Every field little-endian.
std::vector<std::uint8_t> encode_payload(const Payload& payload);
Payload decode_payload(std::span<const std::uint8_t> bytes);

}  // namespace dfl
