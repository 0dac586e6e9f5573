#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "percival/nn.hpp"
#include "percival/tensor.hpp"

namespace percival {

/// Index of the ad class in the network's two-way output.
inline constexpr std::size_t kAdClass = 1;
inline constexpr std::size_t kNonAdClass = 0;

inline constexpr std::size_t kInputChannels = 4;
inline constexpr std::size_t kInputSize = 224;

struct ConvLayer {
    nn::ConvSpec conv;
    bool relu = true;
};

struct MaxPoolLayer {
    std::size_t kernel = 3;
    std::size_t stride = 2;
};

struct FireLayer {
    nn::FireSpec fire;
};

struct GlobalAvgPoolLayer {};
struct SoftmaxLayer {};

using Layer = std::variant<ConvLayer, MaxPoolLayer, FireLayer, GlobalAvgPoolLayer, SoftmaxLayer>;

/// Ordered layer list plus the expected input shape. This is the only place
/// the detector architecture is written down.
struct NetworkSpec {
    Shape input_shape{kInputChannels, kInputSize, kInputSize};
    std::size_t num_classes = 2;
    std::vector<Layer> layers;
};

/// Named parameter tensors, keyed by canonical name ("conv1.w",
/// "fire1.squeeze.b", ...).
using WeightSet = std::map<std::string, Tensor>;

struct ParamInfo {
    std::string name;
    Shape shape;
};

/// Raised when a weight set does not bind to a NetworkSpec: missing, extra,
/// or mis-shaped tensors. `tensor()` names the offending record.
class WeightMismatch : public std::runtime_error {
public:
    WeightMismatch(std::string tensor, const std::string& what)
        : std::runtime_error(what), tensor_(std::move(tensor)) {}
    const std::string& tensor() const noexcept { return tensor_; }

private:
    std::string tensor_;
};

/// The compact SqueezeNet-style detector with zero weights:
/// conv 3x3/s2 (64) -> pool -> fire x2 -> pool -> fire x2 -> pool -> fire x2
/// -> pool -> conv 1x1 (2) -> global average -> softmax.
NetworkSpec reference_network();

std::vector<ParamInfo> parameter_table(const NetworkSpec& spec);
std::size_t parameter_count(const NetworkSpec& spec);

/// Walks the layer chain and returns the final output shape. Throws
/// ShapeError naming the first layer that does not fit.
Shape infer_output_shape(const NetworkSpec& spec);

WeightSet extract_weights(const NetworkSpec& spec);

/// Copies `weights` into `spec`, requiring exactly one tensor per parameter.
void bind_weights(NetworkSpec& spec, const WeightSet& weights);

/// He-style normal initialisation, deterministic for a given seed.
void init_random_weights(NetworkSpec& spec, std::uint64_t seed);

/// Hand-set weights that make the network a colour detector: one activation
/// path carries the local mean of input `channel` through every block, and
/// the ad logit becomes gain * (pooled mean) + bias. Used for test models and
/// demos where an untrained network is not useful.
void init_channel_probe_weights(NetworkSpec& spec, std::size_t channel, float gain, float bias);

/// An immutable, validated network ready for inference. Safe to share across
/// threads; forward passes keep no state.
class Network {
public:
    explicit Network(NetworkSpec spec);

    const NetworkSpec& spec() const noexcept { return spec_; }

    /// Pre-softmax class scores.
    Tensor logits(const Tensor& input) const;

    /// Class probabilities (softmax of logits).
    Tensor forward(const Tensor& input) const;

private:
    void check_input(const Tensor& input) const;

    NetworkSpec spec_;
};

using NetworkPtr = std::shared_ptr<const Network>;

}  // namespace percival
