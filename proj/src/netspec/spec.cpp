#include "edgecap/netspec/spec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "edgecap/error.hpp"
#include "edgecap/nn/blocks.hpp"

namespace edgecap::netspec {

using nlohmann::json;

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Norm: return "norm";
    case LayerKind::Linear: return "linear";
    case LayerKind::ScaleVector: return "scale_vector";
    case LayerKind::Attention: return "attention";
    case LayerKind::Pool: return "pool";
    case LayerKind::Container: return "container";
  }
  return "?";
}

LayerKind parse_kind(const std::string& s) {
  for (LayerKind k : {LayerKind::Conv, LayerKind::Norm, LayerKind::Linear, LayerKind::ScaleVector,
                      LayerKind::Attention, LayerKind::Pool, LayerKind::Container}) {
    if (s == kind_name(k)) return k;
  }
  throw SchemaError("unknown layer kind '" + s + "'");
}

namespace {

void collect_leaves(const std::vector<LayerSpec>& layers, std::vector<const LayerSpec*>& out) {
  for (const LayerSpec& l : layers) {
    if (l.is_leaf()) out.push_back(&l);
    else collect_leaves(l.children, out);
  }
}

bool is_depthwise(std::size_t groups, std::size_t in, std::size_t out) { return groups > 1 && groups == in && groups == out; }

bool same_width_kind(LayerKind k) {
  return k == LayerKind::Norm || k == LayerKind::ScaleVector || k == LayerKind::Attention || k == LayerKind::Pool;
}

struct Validator {
  std::vector<std::string> errors;
  std::set<std::string> names;
  const LayerSpec* prev = nullptr;
  bool spatial = true;  // activations are [C x H x W] until a pool layer

  void fail(const LayerSpec& l, const std::string& msg) { errors.push_back("layer '" + l.name + "': " + msg); }

  void leaf(const LayerSpec& l, bool in_convnext) {
    if (l.in_dim == 0 || l.out_dim == 0) fail(l, "dims must be positive");
    if (same_width_kind(l.kind)) {
      if (l.in_dim != l.out_dim) fail(l, "in and out must be equal");
      if (l.fixed_input != l.fixed_output) fail(l, "fixed_input and fixed_output must agree");
    }
    switch (l.kind) {
      case LayerKind::Conv:
        if (!spatial) fail(l, "conv after pooling");
        if (l.kernel_h == 0 || l.kernel_w == 0 || l.stride == 0) fail(l, "kernel and stride must be positive");
        if (l.groups == 0 || l.in_dim % l.groups != 0 || l.out_dim % l.groups != 0) {
          fail(l, "groups " + std::to_string(l.groups) + " must divide in " + std::to_string(l.in_dim) + " and out " +
                      std::to_string(l.out_dim));
        } else if (is_depthwise(l.groups, l.in_dim, l.out_dim) && l.fixed_input != l.fixed_output) {
          fail(l, "depthwise conv needs matching fixed flags");
        }
        break;
      case LayerKind::Linear:
      case LayerKind::ScaleVector:
        if (spatial && !in_convnext) fail(l, std::string(kind_name(l.kind)) + " needs token input (place after pool)");
        break;
      case LayerKind::Attention:
        if (spatial) fail(l, "attention needs token input (place after pool)");
        if (l.heads == 0 || (l.in_dim != 0 && l.in_dim % l.heads != 0)) fail(l, "heads must divide the width");
        break;
      case LayerKind::Pool:
        if (!spatial) fail(l, "second pool");
        spatial = false;
        break;
      default: break;
    }
    if (prev) {
      if (prev->out_dim != l.in_dim) {
        fail(l, "input " + std::to_string(l.in_dim) + " does not match output " + std::to_string(prev->out_dim) +
                    " of '" + prev->name + "'");
      }
      if (prev->fixed_output != l.fixed_input) fail(l, "fixed_input disagrees with fixed_output of '" + prev->name + "'");
    }
    prev = &l;
  }

  void convnext(const LayerSpec& c) {
    static const LayerKind expected[] = {LayerKind::Conv, LayerKind::Norm, LayerKind::Linear, LayerKind::Linear,
                                         LayerKind::ScaleVector};
    if (c.children.size() != 5) {
      fail(c, "convnext block needs children conv, norm, linear, linear, scale_vector");
      return;
    }
    for (std::size_t i = 0; i < 5; ++i) {
      if (c.children[i].kind != expected[i]) {
        fail(c, "convnext child " + std::to_string(i) + " must be " + kind_name(expected[i]));
        return;
      }
    }
    const LayerSpec& dw = c.children[0];
    if (dw.groups != dw.in_dim || dw.groups != dw.out_dim || dw.kernel_h != 7 || dw.kernel_w != 7 || dw.stride != 1 ||
        dw.padding != 3) {
      fail(c, "convnext block must open with a depthwise 7x7 conv, stride 1, padding 3");
    }
    if (!spatial) fail(c, "convnext block after pooling");
    if (dw.in_dim != c.children[4].out_dim || dw.fixed_input != c.children[4].fixed_output) {
      fail(c, "residual branch changes the channel count");
    }
  }

  void visit(const std::vector<LayerSpec>& layers, bool in_convnext) {
    for (const LayerSpec& l : layers) {
      if (l.name.empty()) errors.push_back("layer with empty name");
      if (!names.insert(l.name).second) fail(l, "duplicate name");
      if (l.is_leaf()) {
        if (!l.children.empty()) fail(l, "leaf layers cannot have children");
        leaf(l, in_convnext);
        continue;
      }
      if (l.children.empty()) {
        fail(l, "container has no children");
        continue;
      }
      if (l.block == BlockKind::ConvNext) convnext(l);
      visit(l.children, in_convnext || l.block == BlockKind::ConvNext);
    }
  }
};

}  // namespace

std::vector<const LayerSpec*> leaves(const NetworkSpec& spec) {
  std::vector<const LayerSpec*> out;
  collect_leaves(spec.layers, out);
  return out;
}

std::size_t NetworkSpec::output_dim() const {
  auto ls = leaves(*this);
  return ls.empty() ? 0 : ls.back()->out_dim;
}

std::vector<std::string> validate(const NetworkSpec& spec) {
  Validator v;
  if (spec.input_channels == 0) v.errors.push_back("input_channels must be positive");
  if (spec.layers.empty()) v.errors.push_back("network has no layers");
  v.visit(spec.layers, false);
  auto ls = leaves(spec);
  if (!ls.empty()) {
    const LayerSpec& first = *ls.front();
    if (first.in_dim != spec.input_channels) {
      v.errors.push_back("layer '" + first.name + "': input " + std::to_string(first.in_dim) +
                         " does not match input_channels " + std::to_string(spec.input_channels));
    }
    if (!first.fixed_input) v.errors.push_back("layer '" + first.name + "': first layer must have fixed_input");
    if (v.spatial) v.errors.push_back("network never pools to tokens");
  }
  return v.errors;
}

void require_valid(const NetworkSpec& spec) {
  auto errors = validate(spec);
  if (errors.empty()) return;
  std::string msg = "invalid network spec '" + spec.name + "':";
  for (const auto& e : errors) msg += "\n  " + e;
  throw ValidationError(msg);
}

std::vector<ParamShape> param_shapes(const LayerSpec& l) {
  const std::string& n = l.name;
  std::vector<ParamShape> out;
  switch (l.kind) {
    case LayerKind::Conv:
      out.push_back({n + ".weight", {l.out_dim, l.in_dim / l.groups, l.kernel_h, l.kernel_w}, {0, 1}});
      if (l.bias) out.push_back({n + ".bias", {l.out_dim}, {0}});
      break;
    case LayerKind::Linear:
      out.push_back({n + ".weight", {l.out_dim, l.in_dim}, {0, 1}});
      if (l.bias) out.push_back({n + ".bias", {l.out_dim}, {0}});
      break;
    case LayerKind::Norm:
      out.push_back({n + ".weight", {l.in_dim}, {0}});
      out.push_back({n + ".bias", {l.in_dim}, {0}});
      break;
    case LayerKind::ScaleVector: out.push_back({n + ".gamma", {l.in_dim}, {0}}); break;
    case LayerKind::Attention: {
      const std::size_t d = l.in_dim;
      for (const char* p : {".q", ".k", ".v", ".o"}) {
        out.push_back({n + p + ".weight", {d, d}, {0, 1}});
        out.push_back({n + p + ".bias", {d}, {0}});
      }
      out.push_back({n + ".fc1.weight", {4 * d, d}, {0, 1}});
      out.push_back({n + ".fc1.bias", {4 * d}, {0}});
      out.push_back({n + ".fc2.weight", {d, 4 * d}, {0, 1}});
      out.push_back({n + ".fc2.bias", {d}, {0}});
      break;
    }
    case LayerKind::Pool:
    case LayerKind::Container: break;
  }
  return out;
}

std::vector<ParamShape> param_shapes(const NetworkSpec& spec) {
  std::vector<ParamShape> out;
  for (const LayerSpec* l : leaves(spec)) {
    auto p = param_shapes(*l);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::size_t count_params(const LayerSpec& l) {
  const std::size_t b = l.bias ? l.out_dim : 0;
  switch (l.kind) {
    case LayerKind::Conv: return l.out_dim * (l.in_dim / l.groups) * l.kernel_h * l.kernel_w + b;
    case LayerKind::Linear: return l.out_dim * l.in_dim + b;
    case LayerKind::Norm: return 2 * l.in_dim;
    case LayerKind::ScaleVector: return l.in_dim;
    case LayerKind::Attention: {
      const std::size_t d = l.in_dim;
      return 4 * d * d + 4 * d + 8 * d * d + 5 * d;
    }
    case LayerKind::Pool: return 0;
    case LayerKind::Container: {
      std::size_t n = 0;
      for (const auto& c : l.children) n += count_params(c);
      return n;
    }
  }
  return 0;
}

std::size_t count_params(const NetworkSpec& spec) {
  std::size_t n = 0;
  for (const auto& l : spec.layers) n += count_params(l);
  return n;
}

std::size_t reduce_dim(std::size_t d, std::size_t prf) {
  if (prf == 0) throw ConfigError("prf must be >= 1");
  return std::max<std::size_t>(1, d / prf);
}

std::size_t adjust_groups(std::size_t new_in, std::size_t new_out, std::size_t old_groups, std::size_t old_in,
                          std::size_t old_out) {
  if (is_depthwise(old_groups, old_in, old_out)) return new_in;
  return std::gcd(old_groups, std::gcd(new_in, new_out));
}

template <Real T>
Tensor<T> interp_resize(const Tensor<T>& w, const Shape& new_shape, const std::vector<std::size_t>& resizable_axes) {
  const Shape& src_shape = w.shape();
  if (new_shape.size() != src_shape.size()) {
    throw DimensionError("interp_resize: rank mismatch " + shape_str(src_shape) + " -> " + shape_str(new_shape));
  }
  for (std::size_t a = 0; a < new_shape.size(); ++a) {
    const bool resizable = std::find(resizable_axes.begin(), resizable_axes.end(), a) != resizable_axes.end();
    if (!resizable && new_shape[a] != src_shape[a]) {
      throw DimensionError("interp_resize: axis " + std::to_string(a) + " is not resizable");
    }
  }
  Tensor<T> cur = w;
  for (std::size_t axis = 0; axis < new_shape.size(); ++axis) {
    const std::size_t n_src = cur.shape()[axis], n_dst = new_shape[axis];
    if (n_src == n_dst) continue;
    Shape out_shape = cur.shape();
    out_shape[axis] = n_dst;
    Tensor<T> out(out_shape);
    std::size_t outer = 1, inner = 1;
    for (std::size_t a = 0; a < axis; ++a) outer *= out_shape[a];
    for (std::size_t a = axis + 1; a < out_shape.size(); ++a) inner *= out_shape[a];
    const T* s = cur.ptr();
    T* d = out.ptr();
    for (std::size_t i = 0; i < n_dst; ++i) {
      std::size_t lo = 0;
      T frac = 0;
      if (n_src > 1 && n_dst > 1) {
        const double pos = static_cast<double>(i * (n_src - 1)) / static_cast<double>(n_dst - 1);
        lo = static_cast<std::size_t>(std::floor(pos));
        frac = static_cast<T>(pos - static_cast<double>(lo));
        if (lo >= n_src - 1) {
          lo = n_src - 1;
          frac = 0;
        }
      }
      const std::size_t hi = std::min(lo + 1, n_src - 1);
      for (std::size_t o = 0; o < outer; ++o) {
        const T* a = s + (o * n_src + lo) * inner;
        const T* b = s + (o * n_src + hi) * inner;
        T* y = d + (o * n_dst + i) * inner;
        for (std::size_t k = 0; k < inner; ++k) {
          if (frac == T(0)) {
            y[k] = a[k];
            continue;
          }
          const T v = a[k] + frac * (b[k] - a[k]);
          y[k] = std::clamp(v, std::min(a[k], b[k]), std::max(a[k], b[k]));
        }
      }
    }
    cur = std::move(out);
  }
  return cur;
}

namespace {

void reduce_layers(std::vector<LayerSpec>& layers, std::size_t prf) {
  for (LayerSpec& l : layers) {
    if (!l.is_leaf()) {
      reduce_layers(l.children, prf);
      continue;
    }
    const std::size_t old_in = l.in_dim, old_out = l.out_dim;
    if (!l.fixed_input) l.in_dim = reduce_dim(l.in_dim, prf);
    if (!l.fixed_output) l.out_dim = reduce_dim(l.out_dim, prf);
    if (l.kind == LayerKind::Conv) l.groups = adjust_groups(l.in_dim, l.out_dim, l.groups, old_in, old_out);
    if (l.kind == LayerKind::Attention) l.heads = std::gcd(l.heads, l.in_dim);
  }
}

}  // namespace

NetworkSpec reduce_spec(const NetworkSpec& spec, const ReductionConfig& cfg) {
  if (cfg.prf == 0) throw ConfigError("prf must be >= 1");
  require_valid(spec);
  NetworkSpec out = spec;
  if (cfg.prf > 1) {
    reduce_layers(out.layers, cfg.prf);
    out.name = spec.name + "-prf" + std::to_string(cfg.prf);
  }
  require_valid(out);
  return out;
}

template <Real T>
Reduced<T> apply_prf(const NetworkSpec& spec, const WeightStore<T>& weights, const ReductionConfig& cfg) {
  Reduced<T> r{reduce_spec(spec, cfg), weights};
  const auto old_shapes = param_shapes(spec);
  const auto new_shapes = param_shapes(r.spec);
  for (std::size_t i = 0; i < old_shapes.size(); ++i) {
    const ParamShape& o = old_shapes[i];
    if (!weights.contains(o.name)) throw StoreError("apply_prf: missing weight '" + o.name + "'");
    const Tensor<T>& w = weights.at(o.name);
    if (w.shape() != o.shape) {
      throw StoreError("apply_prf: weight '" + o.name + "' has shape " + shape_str(w.shape()) + ", spec expects " +
                       shape_str(o.shape));
    }
    if (new_shapes[i].shape != o.shape) r.weights.set(o.name, interp_resize(w, new_shapes[i].shape, o.resizable_axes));
  }
  return r;
}

namespace {

json layer_to_json(const LayerSpec& l) {
  json j;
  j["name"] = l.name;
  j["kind"] = kind_name(l.kind);
  if (!l.is_leaf()) {
    j["block"] = l.block == BlockKind::ConvNext ? "convnext" : "sequential";
    json children = json::array();
    for (const auto& c : l.children) children.push_back(layer_to_json(c));
    j["children"] = std::move(children);
    return j;
  }
  j["in"] = l.in_dim;
  j["out"] = l.out_dim;
  if (l.kind == LayerKind::Conv) {
    j["kernel"] = {l.kernel_h, l.kernel_w};
    j["stride"] = l.stride;
    j["padding"] = l.padding;
    j["groups"] = l.groups;
  }
  if (l.kind == LayerKind::Attention) j["heads"] = l.heads;
  if (l.kind == LayerKind::Conv || l.kind == LayerKind::Linear) j["bias"] = l.bias;
  j["fixed_input"] = l.fixed_input;
  j["fixed_output"] = l.fixed_output;
  return j;
}

template <typename V>
V get_or(const json& j, const char* key, V fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<V>();
  } catch (const json::exception&) {
    throw SchemaError(where + ": field '" + key + "' has the wrong type");
  }
}

std::size_t get_dim(const json& j, const char* key, std::size_t fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number_unsigned()) throw SchemaError(where + ": field '" + key + "' must be a nonnegative integer");
  return j.at(key).get<std::size_t>();
}

LayerSpec layer_from_json(const json& j, const std::string& path) {
  if (!j.is_object()) throw SchemaError(path + ": layer must be an object");
  LayerSpec l;
  l.name = get_or<std::string>(j, "name", "", path);
  const std::string where = path + " ('" + l.name + "')";
  if (!j.contains("kind")) throw SchemaError(where + ": missing 'kind'");
  l.kind = parse_kind(get_or<std::string>(j, "kind", "", where));
  if (!l.is_leaf()) {
    const std::string block = get_or<std::string>(j, "block", "sequential", where);
    if (block == "convnext") l.block = BlockKind::ConvNext;
    else if (block != "sequential") throw SchemaError(where + ": unknown block '" + block + "'");
    if (!j.contains("children") || !j["children"].is_array()) throw SchemaError(where + ": container needs 'children'");
    for (std::size_t i = 0; i < j["children"].size(); ++i) {
      l.children.push_back(layer_from_json(j["children"][i], where + ".children[" + std::to_string(i) + "]"));
    }
    return l;
  }
  if (!j.contains("in") || !j.contains("out")) throw SchemaError(where + ": missing 'in' or 'out'");
  l.in_dim = get_dim(j, "in", 0, where);
  l.out_dim = get_dim(j, "out", 0, where);
  if (j.contains("kernel")) {
    const json& k = j["kernel"];
    if (!k.is_array() || k.size() != 2 || !k[0].is_number_unsigned() || !k[1].is_number_unsigned()) {
      throw SchemaError(where + ": 'kernel' must be [kH, kW]");
    }
    l.kernel_h = k[0].get<std::size_t>();
    l.kernel_w = k[1].get<std::size_t>();
  } else if (l.kind == LayerKind::Conv) {
    throw SchemaError(where + ": conv needs 'kernel'");
  }
  l.stride = get_dim(j, "stride", 1, where);
  l.padding = get_dim(j, "padding", 0, where);
  l.groups = get_dim(j, "groups", 1, where);
  l.heads = get_dim(j, "heads", 1, where);
  l.bias = get_or<bool>(j, "bias", true, where);
  l.fixed_input = get_or<bool>(j, "fixed_input", false, where);
  l.fixed_output = get_or<bool>(j, "fixed_output", false, where);
  return l;
}

}  // namespace

std::string to_json(const NetworkSpec& spec) {
  json j;
  j["name"] = spec.name;
  j["input_channels"] = spec.input_channels;
  json layers = json::array();
  for (const auto& l : spec.layers) layers.push_back(layer_to_json(l));
  j["layers"] = std::move(layers);
  return j.dump(2) + "\n";
}

NetworkSpec spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("network spec: ") + e.what());
  }
  if (!j.is_object()) throw SchemaError("network spec must be a JSON object");
  NetworkSpec spec;
  spec.name = get_or<std::string>(j, "name", "", "network");
  if (!j.contains("input_channels")) throw SchemaError("network: missing 'input_channels'");
  spec.input_channels = get_dim(j, "input_channels", 0, "network");
  if (!j.contains("layers") || !j["layers"].is_array()) throw SchemaError("network: missing 'layers' array");
  for (std::size_t i = 0; i < j["layers"].size(); ++i) {
    spec.layers.push_back(layer_from_json(j["layers"][i], "layers[" + std::to_string(i) + "]"));
  }
  return spec;
}

NetworkSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return spec_from_json(ss.str());
}

void save_spec(const std::filesystem::path& path, const NetworkSpec& spec) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json(spec);
  if (!out) throw IoError("write failed: " + path.string());
}

namespace {

LayerSpec conv(std::string name, std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
               std::size_t padding, std::size_t groups) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::Conv;
  l.in_dim = in;
  l.out_dim = out;
  l.kernel_h = l.kernel_w = k;
  l.stride = stride;
  l.padding = padding;
  l.groups = groups;
  return l;
}

LayerSpec simple(std::string name, LayerKind kind, std::size_t in, std::size_t out) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = kind;
  l.in_dim = in;
  l.out_dim = out;
  return l;
}

LayerSpec container(std::string name, BlockKind block, std::vector<LayerSpec> children) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::Container;
  l.block = block;
  l.children = std::move(children);
  return l;
}

LayerSpec convnext_spec(const std::string& name, std::size_t d) {
  return container(name, BlockKind::ConvNext,
                   {conv(name + ".dwconv", d, d, 7, 1, 3, d), simple(name + ".norm", LayerKind::Norm, d, d),
                    simple(name + ".pwconv1", LayerKind::Linear, d, 4 * d),
                    simple(name + ".pwconv2", LayerKind::Linear, 4 * d, d),
                    simple(name + ".layer_scale", LayerKind::ScaleVector, d, d)});
}

}  // namespace

NetworkSpec default_backbone(std::size_t input_channels, std::size_t model_dim) {
  static const std::size_t dims[] = {16, 32, 64};
  static const std::size_t depths[] = {1, 1, 2};
  NetworkSpec spec;
  spec.name = "convnext-toy";
  spec.input_channels = input_channels;
  LayerSpec stem_conv = conv("stem.conv", input_channels, dims[0], 2, 2, 0, 1);
  stem_conv.fixed_input = true;
  spec.layers.push_back(
      container("stem", BlockKind::Sequential, {stem_conv, simple("stem.norm", LayerKind::Norm, dims[0], dims[0])}));
  for (std::size_t s = 0; s < 3; ++s) {
    const std::string stage = "stage" + std::to_string(s);
    std::vector<LayerSpec> children;
    if (s > 0) {
      const std::size_t prev = dims[s - 1];
      children.push_back(simple(stage + ".down_norm", LayerKind::Norm, prev, prev));
      children.push_back(conv(stage + ".down_conv", prev, dims[s], 2, 2, 0, 1));
    }
    for (std::size_t b = 0; b < depths[s]; ++b) {
      children.push_back(convnext_spec(stage + ".block" + std::to_string(b), dims[s]));
    }
    spec.layers.push_back(container(stage, BlockKind::Sequential, std::move(children)));
  }
  LayerSpec proj = simple("head.proj", LayerKind::Linear, dims[2], model_dim);
  proj.fixed_output = true;
  spec.layers.push_back(container("head", BlockKind::Sequential,
                                  {simple("head.pool", LayerKind::Pool, dims[2], dims[2]),
                                   simple("head.norm", LayerKind::Norm, dims[2], dims[2]), proj}));
  return spec;
}

template <Real T>
void init_weights(const NetworkSpec& spec, WeightStore<T>& store, Rng& rng) {
  for (const LayerSpec* l : leaves(spec)) {
    for (const ParamShape& p : param_shapes(*l)) {
      const bool is_bias = p.name.size() > 5 && p.name.compare(p.name.size() - 5, 5, ".bias") == 0;
      Tensor<T> t(p.shape);
      if (l->kind == LayerKind::Norm) {
        if (!is_bias) t = Tensor<T>(p.shape, T(1));
      } else if (l->kind == LayerKind::ScaleVector) {
        t = Tensor<T>(p.shape, T(0.1));
      } else if (!is_bias) {
        // Fan-in scaled normal keeps activations O(1) through the stack.
        std::size_t fan_in = 1;
        for (std::size_t a = 1; a < p.shape.size(); ++a) fan_in *= p.shape[a];
        t = nn::normal_tensor<T>(p.shape, rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
      }
      store.set(p.name, std::move(t));
    }
  }
}

namespace {

template <Real T>
Var<T> run_layers(const std::vector<LayerSpec>& layers, const nn::Params<T>& p, Var<T> x);

template <Real T>
Var<T> run_leaf(const LayerSpec& l, const nn::Params<T>& p, Var<T> x) {
  const bool spatial = x.shape().size() == 3;
  switch (l.kind) {
    case LayerKind::Conv: {
      std::optional<Var<T>> b;
      if (l.bias) b = p(l.name + ".bias");
      return ops::conv2d(x, p(l.name + ".weight"), b, Conv2dParams{l.stride, l.padding, l.groups});
    }
    case LayerKind::Norm: return spatial ? nn::channel_norm(p, l.name, x) : nn::layer_norm(p, l.name, x);
    case LayerKind::Linear: return nn::linear(p, l.name, x);
    case LayerKind::ScaleVector: return ops::scale_columns(x, p(l.name + ".gamma"));
    case LayerKind::Attention: {
      nn::AttentionConfig cfg{l.heads, l.in_dim, false};
      x = ops::add(x, nn::multi_head_attention(p, l.name, x, x, cfg));
      return ops::add(x, nn::feed_forward(p, l.name, x));
    }
    case LayerKind::Pool:
      return nn::grid_to_tokens(ops::adaptive_avg_pool2d(x, nn::kGridSide, nn::kGridSide));
    case LayerKind::Container: return run_layers(l.children, p, x);
  }
  return x;
}

template <Real T>
Var<T> run_layers(const std::vector<LayerSpec>& layers, const nn::Params<T>& p, Var<T> x) {
  for (const LayerSpec& l : layers) {
    if (l.is_leaf() || l.block == BlockKind::Sequential) {
      x = run_leaf(l, p, x);
      continue;
    }
    const auto& c = l.children;
    nn::ConvNextBlockParams<T> v{p(c[0].name + ".weight"), p(c[0].name + ".bias"),
                                 p(c[1].name + ".weight"), p(c[1].name + ".bias"),
                                 p(c[2].name + ".weight"), p(c[2].name + ".bias"),
                                 p(c[3].name + ".weight"), p(c[3].name + ".bias"),
                                 p(c[4].name + ".gamma")};
    x = nn::convnext_block(x, v);
  }
  return x;
}

}  // namespace

template <Real T>
Var<T> forward(const NetworkSpec& spec, const nn::Params<T>& p, Var<T> image) {
  if (image.shape().size() != 3 || image.shape()[0] != spec.input_channels) {
    throw DimensionError("backbone expects [" + std::to_string(spec.input_channels) + " x H x W] input, got " +
                         shape_str(image.shape()));
  }
  return run_layers(spec.layers, p, image);
}

#define EDGECAP_NETSPEC_INSTANTIATE(T)                                                                     \
  template Tensor<T> interp_resize(const Tensor<T>&, const Shape&, const std::vector<std::size_t>&);       \
  template Reduced<T> apply_prf(const NetworkSpec&, const WeightStore<T>&, const ReductionConfig&);       \
  template void init_weights(const NetworkSpec&, WeightStore<T>&, Rng&);                                   \
  template Var<T> forward(const NetworkSpec&, const nn::Params<T>&, Var<T>);

EDGECAP_NETSPEC_INSTANTIATE(float)
EDGECAP_NETSPEC_INSTANTIATE(double)

#undef EDGECAP_NETSPEC_INSTANTIATE

}  // namespace edgecap::netspec
