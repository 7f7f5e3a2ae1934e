#pragma once

// Declarative layer graph for the image backbone, the structural reduction
// transform applied to it, and the spec-driven forward pass.

#include <filesystem>
#include <string>
#include <vector>

#include "edgecap/tensor/ops.hpp"
#include "edgecap/tensor/rng.hpp"
#include "edgecap/tensor/weights.hpp"

namespace edgecap::netspec {

enum class LayerKind { Conv, Norm, Linear, ScaleVector, Attention, Pool, Container };
enum class BlockKind { Sequential, ConvNext };

const char* kind_name(LayerKind k);
LayerKind parse_kind(const std::string& s);

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Container;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::size_t kernel_h = 1, kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
  std::size_t heads = 1;  // attention only
  bool bias = true;       // conv / linear
  bool fixed_input = false;
  bool fixed_output = false;
  BlockKind block = BlockKind::Sequential;  // container only
  std::vector<LayerSpec> children;

  bool is_leaf() const { return kind != LayerKind::Container; }
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct NetworkSpec {
  std::string name;
  std::size_t input_channels = 0;
  std::vector<LayerSpec> layers;

  // Output width of the last leaf.
  std::size_t output_dim() const;
  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

struct ReductionConfig {
  std::size_t prf = 1;
};

// Leaves in dataflow order.
std::vector<const LayerSpec*> leaves(const NetworkSpec& spec);

// Empty when the spec is valid; otherwise one message per problem, each
// naming the offending layer.
std::vector<std::string> validate(const NetworkSpec& spec);
// Throws ValidationError carrying every message.
void require_valid(const NetworkSpec& spec);

std::size_t count_params(const LayerSpec& leaf);
std::size_t count_params(const NetworkSpec& spec);

// Weight entry names and shapes a leaf owns.
struct ParamShape {
  std::string name;
  Shape shape;
  std::vector<std::size_t> resizable_axes;
};
std::vector<ParamShape> param_shapes(const LayerSpec& leaf);
std::vector<ParamShape> param_shapes(const NetworkSpec& spec);

std::size_t reduce_dim(std::size_t d, std::size_t prf);
std::size_t adjust_groups(std::size_t new_in, std::size_t new_out, std::size_t old_groups, std::size_t old_in,
                          std::size_t old_out);

// Endpoint-aligned separable linear interpolation along `resizable_axes`.
// Other axes must keep their size.
template <Real T>
Tensor<T> interp_resize(const Tensor<T>& w, const Shape& new_shape, const std::vector<std::size_t>& resizable_axes);

NetworkSpec reduce_spec(const NetworkSpec& spec, const ReductionConfig& cfg);

template <Real T>
struct Reduced {
  NetworkSpec spec;
  WeightStore<T> weights;
};

// Entries of `weights` that do not belong to the spec are carried over
// untouched.
template <Real T>
Reduced<T> apply_prf(const NetworkSpec& spec, const WeightStore<T>& weights, const ReductionConfig& cfg);

// JSON document {"name", "input_channels", "layers": [...]}.
std::string to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const std::string& text);
NetworkSpec load_spec(const std::filesystem::path& path);
void save_spec(const std::filesystem::path& path, const NetworkSpec& spec);

// Toy ConvNeXt-style backbone: stem, three stages of widths [16, 32, 64]
// with depths [1, 1, 2], pooling to 7x7, and a projection to model_dim.
NetworkSpec default_backbone(std::size_t input_channels, std::size_t model_dim);

template <Real T>
void init_weights(const NetworkSpec& spec, WeightStore<T>& store, Rng& rng);

}  // namespace edgecap::netspec

namespace edgecap::nn {
template <Real T>
class Params;
}

namespace edgecap::netspec {

// Runs an image [C x H x W] through the spec and returns [49 x output_dim]
// tokens.
template <Real T>
Var<T> forward(const NetworkSpec& spec, const nn::Params<T>& p, Var<T> image);

}  // namespace edgecap::netspec
