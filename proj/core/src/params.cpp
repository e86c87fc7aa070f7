#include "stereolidar/params.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>

#include "json.hpp"

namespace stereolidar {

using ndgrad::DiffArray;
using ndgrad::Shape;

std::size_t ParamStore::add(std::string name, Shape shape, std::vector<double> values) {
  if (ndgrad::shape_size(shape) != values.size()) {
    throw ShapeError("parameter '" + name + "': " + std::to_string(values.size()) + " values for shape " +
                     ndgrad::shape_str(shape));
  }
  for (const auto& t : tensors_)
    if (t.name == name) throw ArgumentError("duplicate parameter name '" + name + "'");
  tensors_.push_back({std::move(name), std::move(shape), std::move(values)});
  return tensors_.size() - 1;
}

std::size_t ParamStore::add_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                                 std::mt19937_64& rng, bool zero) {
  const std::size_t fan_in = cin * k * k;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(cout * fan_in, 0.0), b(cout, 0.0);
  if (!zero) {
    for (auto& v : w) v = dist(rng);
    for (auto& v : b) v = dist(rng);
  }
  const std::size_t wi = add(name + ".weight", {cout, cin, k, k}, std::move(w));
  add(name + ".bias", {cout}, std::move(b));
  return wi;
}

std::size_t ParamStore::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i)
    if (tensors_[i].name == name) return i;
  throw ArgumentError("no parameter named '" + name + "'");
}

std::size_t ParamStore::num_values() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.values.size();
  return n;
}

std::vector<double> ParamStore::flatten() const {
  std::vector<double> flat;
  flat.reserve(num_values());
  for (const auto& t : tensors_) flat.insert(flat.end(), t.values.begin(), t.values.end());
  return flat;
}

void ParamStore::assign_flat(std::span<const double> flat) {
  if (flat.size() != num_values()) {
    throw ShapeError("assign_flat: " + std::to_string(flat.size()) + " values for " + std::to_string(num_values()) +
                     " parameters");
  }
  std::size_t off = 0;
  for (auto& t : tensors_) {
    std::copy(flat.begin() + off, flat.begin() + off + t.values.size(), t.values.begin());
    off += t.values.size();
  }
}

namespace {

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return r;
  }
  return v;
}

}  // namespace

void ParamStore::save(const std::filesystem::path& blob, const std::filesystem::path& sidecar) const {
  std::ofstream out(blob, std::ios::binary);
  if (!out) throw Error("cannot open '" + blob.string() + "' for writing");
  nlohmann::json meta = nlohmann::json::array();
  for (const auto& t : tensors_) {
    for (double v : t.values) {
      const std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(v));
      out.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
    }
    meta.push_back({{"name", t.name}, {"shape", t.shape}});
  }
  std::ofstream js(sidecar);
  if (!js) throw Error("cannot open '" + sidecar.string() + "' for writing");
  js << meta.dump(2) << '\n';
}

void ParamStore::load(const std::filesystem::path& blob, const std::filesystem::path& sidecar) {
  std::ifstream js(sidecar);
  if (!js) throw Error("cannot open '" + sidecar.string() + "'");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(js);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("checkpoint sidecar: ") + e.what(), e.byte);
  }
  if (!meta.is_array() || meta.size() != tensors_.size()) {
    throw ParseError("checkpoint sidecar lists " + std::to_string(meta.size()) + " tensors, model has " +
                         std::to_string(tensors_.size()),
                     0);
  }
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    const auto name = meta[i].at("name").get<std::string>();
    const auto shape = meta[i].at("shape").get<Shape>();
    if (name != tensors_[i].name || shape != tensors_[i].shape) {
      throw ParseError("checkpoint tensor " + std::to_string(i) + " is '" + name + "' " + ndgrad::shape_str(shape) +
                           ", expected '" + tensors_[i].name + "' " + ndgrad::shape_str(tensors_[i].shape),
                       0);
    }
  }
  std::ifstream in(blob, std::ios::binary);
  if (!in) throw Error("cannot open '" + blob.string() + "'");
  std::size_t offset = 0;
  for (auto& t : tensors_) {
    for (auto& v : t.values) {
      std::uint64_t bits = 0;
      if (!in.read(reinterpret_cast<char*>(&bits), sizeof(bits))) {
        throw ParseError("checkpoint blob truncated", offset);
      }
      v = std::bit_cast<double>(to_le(bits));
      offset += sizeof(bits);
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError("checkpoint blob has trailing bytes", offset);
}

bool ParamStore::operator==(const ParamStore& other) const {
  if (tensors_.size() != other.tensors_.size()) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    const auto& a = tensors_[i];
    const auto& b = other.tensors_[i];
    if (a.name != b.name || a.shape != b.shape || a.values != b.values) return false;
  }
  return true;
}

BoundParams::BoundParams(const ParamStore& store, ndgrad::Tape* tape) {
  arrays_.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& t = store[i];
    arrays_.push_back(tape ? tape->leaf(t.shape, t.values) : DiffArray::constant(t.shape, t.values));
  }
}

std::vector<double> BoundParams::flat_grad() const {
  std::vector<double> flat;
  for (const auto& a : arrays_) {
    auto g = a.grad();
    if (g.empty())
      flat.insert(flat.end(), a.size(), 0.0);
    else
      flat.insert(flat.end(), g.begin(), g.end());
  }
  return flat;
}

DiffArray ConvLayer::operator()(const BoundParams& params, const DiffArray& x) const {
  if (stride == 1) return ndgrad::conv2d(x, params[weight], 1, padding, &params[weight + 1]);
  const std::size_t k = params[weight].dim(2);
  const std::size_t total = k >= 2 ? k - 2 : 0;
  const std::size_t lo = total / 2, hi = total - lo;
  return ndgrad::conv2d(ndgrad::pad2d_zero(x, lo, hi, lo, hi), params[weight], stride, 0, &params[weight + 1]);
}

ConvLayer make_conv(ParamStore& store, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                    std::size_t stride, std::mt19937_64& rng, bool zero) {
  ConvLayer layer;
  layer.weight = store.add_conv(name, cin, cout, k, rng, zero);
  layer.stride = stride;
  layer.padding = k / 2;
  return layer;
}

}  // namespace stereolidar
