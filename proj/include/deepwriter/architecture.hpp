#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "deepwriter/layers.hpp"

namespace deepwriter {

struct FullyConnectedSpec {
  std::size_t width = 1;
  friend bool operator==(const FullyConnectedSpec&, const FullyConnectedSpec&) = default;
};
struct ReluSpec {
  friend bool operator==(const ReluSpec&, const ReluSpec&) = default;
};
struct DropoutSpec {
  double ratio = 0.5;
  friend bool operator==(const DropoutSpec&, const DropoutSpec&) = default;
};
/// Final fully-connected layer of width num_classes feeding the softmax.
struct ClassifierSpec {
  friend bool operator==(const ClassifierSpec&, const ClassifierSpec&) = default;
};

using LayerEntry = std::variant<ConvSpec, PoolSpec, FullyConnectedSpec, ReluSpec,
                                DropoutSpec, ClassifierSpec>;

/**
 * Ordered layer stack of one stream plus the classifier.
 *
 * Channel counts and fully-connected widths in `layers` are nominal; the
 * built network multiplies them by `scale` (rounded, at least 1). The
 * classifier width is always `num_classes`.
 */
struct ArchitectureSpec {
  std::vector<LayerEntry> layers;
  std::size_t input_side = 113;
  std::size_t input_channels = 1;
  std::size_t num_classes = 2;
  double scale = 1.0;

  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

inline std::size_t scaled_width(std::size_t nominal, double scale) {
  const auto v = std::llround(static_cast<double>(nominal) * scale);
  return v < 1 ? 1 : static_cast<std::size_t>(v);
}

// --------------------------------------------------------------------------
// Presets

struct PresetOptions {
  std::size_t num_classes = 2;
  std::size_t input_side = 113;
  double scale = 1.0;
  std::size_t fc_width = 1024;
  double dropout = 0.5;
};

namespace detail {
inline ArchitectureSpec alexnet_pattern(const PresetOptions& o, ConvSpec conv1,
                                        ConvSpec conv2) {
  ArchitectureSpec s;
  s.input_side = o.input_side;
  s.num_classes = o.num_classes;
  s.scale = o.scale;
  s.layers = {
      conv1,        ReluSpec{},  PoolSpec{3, 2},
      conv2,        ReluSpec{},  PoolSpec{3, 2},
      ConvSpec{384, 3, 1, 1}, ReluSpec{},
      ConvSpec{384, 3, 1, 1}, ReluSpec{},
      ConvSpec{256, 3, 1, 1}, ReluSpec{}, PoolSpec{3, 2},
      FullyConnectedSpec{o.fc_width}, ReluSpec{}, DropoutSpec{o.dropout},
      FullyConnectedSpec{o.fc_width}, ReluSpec{}, DropoutSpec{o.dropout},
      ClassifierSpec{},
  };
  return s;
}
}  // namespace detail

/// Stream shared by Half DeepWriter and DeepWriter: Conv1 96C5S2,
/// Conv2 256C3S1P1, AlexNet-pattern Conv3-5 and pooling, FC6/FC7 1024.
inline ArchitectureSpec deepwriter_preset(const PresetOptions& o = {}) {
  return detail::alexnet_pattern(o, ConvSpec{96, 5, 2, 0}, ConvSpec{256, 3, 1, 1});
}

/// The AlexNet first two convolutions (96C11S4, 256C5S1P2), used by the
/// kernel-size comparison at 227 and 131 pixel inputs.
inline ArchitectureSpec alexnet_kernel_preset(const PresetOptions& o) {
  return detail::alexnet_pattern(o, ConvSpec{96, 11, 4, 0}, ConvSpec{256, 5, 1, 2});
}

// --------------------------------------------------------------------------
// Text form: "96C5S2", "256C3S1P1", "M3S2", "FC1024", "ReLU", "D0.5", "SM".

inline std::string layer_notation(const LayerEntry& e) {
  struct Visitor {
    std::string operator()(const ConvSpec& c) const {
      std::string s = std::to_string(c.out_channels) + "C" + std::to_string(c.kernel) +
                      "S" + std::to_string(c.stride);
      if (c.padding) s += "P" + std::to_string(c.padding);
      return s;
    }
    std::string operator()(const PoolSpec& p) const {
      return "M" + std::to_string(p.window) + "S" + std::to_string(p.stride);
    }
    std::string operator()(const FullyConnectedSpec& f) const {
      return "FC" + std::to_string(f.width);
    }
    std::string operator()(const ReluSpec&) const { return "ReLU"; }
    std::string operator()(const DropoutSpec& d) const {
      char buf[40];
      std::snprintf(buf, sizeof buf, "D%.17g", d.ratio);
      return buf;
    }
    std::string operator()(const ClassifierSpec&) const { return "SM"; }
  };
  return std::visit(Visitor{}, e);
}

namespace detail {
inline std::size_t parse_count(std::string_view text, std::size_t& pos) {
  const std::size_t start = pos;
  std::size_t v = 0;
  while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
    v = v * 10 + static_cast<std::size_t>(text[pos] - '0');
    ++pos;
  }
  if (pos == start) {
    throw DomainError("expected a number in layer notation '" + std::string(text) + "'");
  }
  return v;
}
}  // namespace detail

inline LayerEntry parse_layer(std::string_view text) {
  auto bad = [&] {
    return DomainError("unrecognized layer notation '" + std::string(text) + "'");
  };
  if (text == "ReLU") return ReluSpec{};
  if (text == "SM") return ClassifierSpec{};
  if (text.starts_with("FC")) {
    std::size_t pos = 2;
    const auto w = detail::parse_count(text, pos);
    if (pos != text.size()) throw bad();
    return FullyConnectedSpec{w};
  }
  if (text.starts_with("D")) {
    try {
      std::size_t used = 0;
      const std::string rest(text.substr(1));
      const double r = std::stod(rest, &used);
      if (used != rest.size() || !(r >= 0.0 && r < 1.0)) throw bad();
      return DropoutSpec{r};
    } catch (const std::logic_error&) {
      throw bad();
    }
  }
  std::size_t pos = 0;
  if (text.starts_with("M")) {
    pos = 1;
    PoolSpec p;
    p.window = detail::parse_count(text, pos);
    if (pos >= text.size() || text[pos] != 'S') throw bad();
    ++pos;
    p.stride = detail::parse_count(text, pos);
    if (pos != text.size()) throw bad();
    return p;
  }
  ConvSpec c;
  c.out_channels = detail::parse_count(text, pos);
  if (pos >= text.size() || text[pos] != 'C') throw bad();
  ++pos;
  c.kernel = detail::parse_count(text, pos);
  if (pos >= text.size() || text[pos] != 'S') throw bad();
  ++pos;
  c.stride = detail::parse_count(text, pos);
  if (pos < text.size()) {
    if (text[pos] != 'P') throw bad();
    ++pos;
    c.padding = detail::parse_count(text, pos);
  }
  if (pos != text.size()) throw bad();
  return c;
}

/// Canonical single-line form, e.g.
/// "input=113 channels=1 classes=301 scale=1 layers=96C5S2,ReLU,...,SM".
inline std::string to_string(const ArchitectureSpec& s) {
  std::ostringstream os;
  char scale[40];
  std::snprintf(scale, sizeof scale, "%.17g", s.scale);
  os << "input=" << s.input_side << " channels=" << s.input_channels
     << " classes=" << s.num_classes << " scale=" << scale << " layers=";
  for (std::size_t i = 0; i < s.layers.size(); ++i) {
    if (i) os << ',';
    os << layer_notation(s.layers[i]);
  }
  return os.str();
}

inline ArchitectureSpec parse_architecture(std::string_view text) {
  ArchitectureSpec s;
  std::istringstream is{std::string(text)};
  std::string field;
  bool have_layers = false;
  while (is >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) {
      throw DomainError("malformed architecture field '" + field + "'");
    }
    const std::string key = field.substr(0, eq), value = field.substr(eq + 1);
    try {
      if (key == "input") {
        s.input_side = std::stoul(value);
      } else if (key == "channels") {
        s.input_channels = std::stoul(value);
      } else if (key == "classes") {
        s.num_classes = std::stoul(value);
      } else if (key == "scale") {
        s.scale = std::stod(value);
      } else if (key == "layers") {
        have_layers = true;
        std::size_t start = 0;
        while (start <= value.size()) {
          const auto comma = value.find(',', start);
          const auto end = comma == std::string::npos ? value.size() : comma;
          s.layers.push_back(parse_layer(std::string_view(value).substr(start, end - start)));
          if (comma == std::string::npos) break;
          start = comma + 1;
        }
      } else {
        throw DomainError("unknown architecture field '" + key + "'");
      }
    } catch (const std::logic_error&) {
      throw DomainError("malformed architecture value '" + field + "'");
    }
  }
  if (!have_layers) throw DomainError("architecture text has no layers");
  return s;
}

/// FNV-1a 64 of the canonical text form.
inline std::uint64_t fingerprint(const ArchitectureSpec& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_string(s)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// --------------------------------------------------------------------------
// Shape resolution

/// One layer after scaling, with its parameter name and tensor dims.
struct ResolvedLayer {
  LayerEntry entry;            // widths already scaled
  std::string name;            // "conv1", "fc6", ... ; empty for unweighted layers
  Shape input_dims;
  Shape output_dims;
  std::optional<std::size_t> param_index;
};

/**
 * Applies scale, assigns AlexNet-style names (conv1.., then fc continuing
 * the count) and propagates dims through every layer. Throws ShapeError when
 * a layer does not fit its input and DomainError on malformed stacks.
 */
inline std::vector<ResolvedLayer> resolve(const ArchitectureSpec& spec) {
  if (spec.layers.empty()) throw DomainError("architecture has no layers");
  if (!std::holds_alternative<ClassifierSpec>(spec.layers.back())) {
    throw DomainError("architecture must end with the classifier");
  }
  if (spec.num_classes < 2) throw DomainError("num_classes must be >= 2");
  if (!(spec.scale > 0.0)) throw DomainError("scale must be positive");
  if (spec.input_side < 1 || spec.input_channels < 1) {
    throw DomainError("input side and channels must be positive");
  }

  std::vector<ResolvedLayer> out;
  Shape dims{spec.input_channels, spec.input_side, spec.input_side};
  std::size_t weighted = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerEntry& e = spec.layers[i];
    ResolvedLayer r{e, {}, dims, {}, {}};
    const std::string where = "layer " + std::to_string(i + 1) + " (" + layer_notation(e) + ")";
    if (const auto* c = std::get_if<ConvSpec>(&e)) {
      if (dims.size() != 3) throw ShapeError(where + " follows a fully-connected layer");
      if (c->out_channels < 1 || c->kernel < 1 || c->stride < 1) {
        throw DomainError(where + " has a zero field");
      }
      ConvSpec sc = *c;
      sc.out_channels = scaled_width(c->out_channels, spec.scale);
      r.entry = sc;
      try {
        dims = {sc.out_channels,
                window_output_side(dims[1], sc.kernel, sc.stride, sc.padding),
                window_output_side(dims[2], sc.kernel, sc.stride, sc.padding)};
      } catch (const ShapeError& err) {
        throw ShapeError(where + ": " + err.what());
      }
      r.name = "conv" + std::to_string(++weighted);
    } else if (const auto* p = std::get_if<PoolSpec>(&e)) {
      if (dims.size() != 3) throw ShapeError(where + " follows a fully-connected layer");
      try {
        dims = {dims[0], window_output_side(dims[1], p->window, p->stride),
                window_output_side(dims[2], p->window, p->stride)};
      } catch (const ShapeError& err) {
        throw ShapeError(where + ": " + err.what());
      }
    } else if (const auto* f = std::get_if<FullyConnectedSpec>(&e)) {
      if (f->width < 1) throw DomainError(where + " has zero width");
      const std::size_t w = scaled_width(f->width, spec.scale);
      r.entry = FullyConnectedSpec{w};
      dims = {w};
      r.name = "fc" + std::to_string(++weighted);
    } else if (const auto* d = std::get_if<DropoutSpec>(&e)) {
      check_dropout_ratio(d->ratio);
    } else if (std::holds_alternative<ClassifierSpec>(e)) {
      if (i + 1 != spec.layers.size()) {
        throw DomainError(where + ": classifier must be the final layer");
      }
      dims = {spec.num_classes};
      r.name = "fc" + std::to_string(++weighted);
    }
    r.output_dims = dims;
    out.push_back(std::move(r));
  }
  std::size_t index = 0;
  for (auto& r : out) {
    if (!r.name.empty()) r.param_index = index++;
  }
  return out;
}

struct LayerShape {
  std::string label;  // e.g. "conv1 96C5S2", "flatten"
  Shape dims;
};

/// Dims after every layer, with a "flatten" row where spatial maps enter the
/// first fully-connected layer.
inline std::vector<LayerShape> output_shapes(const ArchitectureSpec& spec) {
  std::vector<LayerShape> rows;
  rows.push_back({"input", {spec.input_channels, spec.input_side, spec.input_side}});
  for (const auto& r : resolve(spec)) {
    if (r.input_dims.size() == 3 && r.output_dims.size() == 1) {
      rows.push_back({"flatten", {shape_size(r.input_dims)}});
    }
    std::string label = layer_notation(r.entry);
    if (std::holds_alternative<ClassifierSpec>(r.entry)) {
      label = "FC" + std::to_string(spec.num_classes) + " softmax";
    }
    rows.push_back({r.name.empty() ? label : r.name + " " + label, r.output_dims});
  }
  return rows;
}

}  // namespace deepwriter
