#pragma once

// Named trainable parameters with persistent gradient buffers, plus the
// flat binary checkpoint format: per tensor, a (name, shape, raw f64
// little-endian values) record.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <unordered_map>

#include "noisymarl/tensor.hpp"

namespace noisymarl {

struct Parameter {
  std::string name;
  Tensor value;
  std::vector<double> grad;

  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.size(), 0.0) {}
};

// Insertion-ordered so init draws, optimizer state and serialization are
// all reproducible.
class ParamSet {
 public:
  Parameter& add(std::string name, Tensor init) {
    if (index_.count(name)) fail("ParamSet::add", "duplicate parameter " + name);
    items_.push_back(std::make_unique<Parameter>(name, std::move(init)));
    index_[items_.back()->name] = items_.size() - 1;
    return *items_.back();
  }

  Parameter& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) fail("ParamSet::at", "unknown parameter " + name);
    return *items_[it->second];
  }
  const Parameter& at(const std::string& name) const {
    return const_cast<ParamSet*>(this)->at(name);
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t count() const { return items_.size(); }
  Parameter& operator[](std::size_t i) { return *items_[i]; }
  const Parameter& operator[](std::size_t i) const { return *items_[i]; }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : items_) std::fill(p->grad.begin(), p->grad.end(), 0.0);
  }

  // Copies values (not grads); shapes must match. Used for target-net sync.
  void copy_values_from(const ParamSet& other) {
    if (other.count() != count()) fail("ParamSet::copy_values_from", "size mismatch");
    for (std::size_t i = 0; i < count(); ++i) {
      if (other[i].value.shape != items_[i]->value.shape)
        fail("ParamSet::copy_values_from", "shape mismatch at " + items_[i]->name);
      items_[i]->value.data = other[i].value.data;
    }
  }

  bool values_equal(const ParamSet& other) const {
    if (other.count() != count()) return false;
    for (std::size_t i = 0; i < count(); ++i) {
      if (items_[i]->name != other[i].name) return false;
      if (items_[i]->value.shape != other[i].value.shape) return false;
      if (std::memcmp(items_[i]->value.data.data(), other[i].value.data.data(),
                      items_[i]->value.size() * sizeof(double)) != 0)
        return false;
    }
    return true;
  }

 private:
  std::vector<std::unique_ptr<Parameter>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) fail("params::load", "truncated file");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

inline void write_f64le(std::ostream& os, double d) {
  std::uint64_t u;
  std::memcpy(&u, &d, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) fail("params::load", "truncated file");
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= std::uint64_t(b[i]) << (8 * i);
  double d;
  std::memcpy(&d, &u, 8);
  return d;
}

}  // namespace detail

inline void save_params(const ParamSet& set, std::ostream& os) {
  for (std::size_t i = 0; i < set.count(); ++i) {
    const Parameter& p = set[i];
    detail::write_u32(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::write_u32(os, static_cast<std::uint32_t>(p.value.shape.size()));
    for (int d : p.value.shape) detail::write_u32(os, static_cast<std::uint32_t>(d));
    for (double v : p.value.data) detail::write_f64le(os, v);
  }
}

inline void save_params(const ParamSet& set, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail("save_params", "cannot open " + path);
  save_params(set, os);
}

// Loads records into an existing set; every record must match a declared
// parameter's shape. Missing or extra records are hard errors.
inline void load_params(ParamSet& set, std::istream& is) {
  std::size_t seen = 0;
  while (is.peek() != std::char_traits<char>::eof()) {
    std::uint32_t name_len = detail::read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) fail("params::load", "truncated name");
    std::uint32_t rank = detail::read_u32(is);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int>(detail::read_u32(is));
    if (!set.contains(name)) fail("params::load", "unexpected parameter " + name);
    Parameter& p = set.at(name);
    if (p.value.shape != shape)
      fail("params::load", "shape mismatch for " + name + ": file " + shape_str(shape) +
                               " vs declared " + shape_str(p.value.shape));
    for (double& v : p.value.data) v = detail::read_f64le(is);
    ++seen;
  }
  if (seen != set.count())
    fail("params::load", "file has " + std::to_string(seen) + " records, expected " +
                             std::to_string(set.count()));
}

inline void load_params(ParamSet& set, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("load_params", "cannot open " + path);
  load_params(set, is);
}

// One checkpoint file may hold several sets back to back (policy, value,
// ...). Records are routed to whichever set declares the name.
inline void load_params(std::vector<ParamSet*> sets, std::istream& is) {
  std::size_t seen = 0, expected = 0;
  for (ParamSet* s : sets) expected += s->count();
  while (is.peek() != std::char_traits<char>::eof()) {
    std::uint32_t name_len = detail::read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) fail("params::load", "truncated name");
    std::uint32_t rank = detail::read_u32(is);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int>(detail::read_u32(is));
    Parameter* p = nullptr;
    for (ParamSet* s : sets)
      if (s->contains(name)) {
        p = &s->at(name);
        break;
      }
    if (!p) fail("params::load", "unexpected parameter " + name);
    if (p->value.shape != shape)
      fail("params::load", "shape mismatch for " + name + ": file " + shape_str(shape) +
                               " vs declared " + shape_str(p->value.shape));
    for (double& v : p->value.data) v = detail::read_f64le(is);
    ++seen;
  }
  if (seen != expected)
    fail("params::load", "file has " + std::to_string(seen) + " records, expected " +
                             std::to_string(expected));
}

inline void load_params(std::vector<ParamSet*> sets, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("load_params", "cannot open " + path);
  load_params(std::move(sets), is);
}

}  // namespace noisymarl
