#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "pogmv/tape.hpp"

namespace pogmv {

// Named trainable parameters (64-bit in memory) plus Adam moments.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor m;  // first moment
    Tensor v;  // second moment
  };

  int add(const std::string& name, Tensor init);
  bool has(const std::string& name) const;
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t total_params() const;

  int64_t adam_steps = 0;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> index_;
};

// Binds store parameters into a tape for one forward/backward pass; applies
// one Adam update from the accumulated tape gradients afterwards.
class ParamBinder {
 public:
  ParamBinder(Tape& tape, ParamStore& store) : tape_(&tape), store_(&store) {}

  Var operator()(const std::string& name);

  // One Adam step over every bound parameter (others keep zero gradient but
  // still advance their moment estimates, keeping updates order-independent).
  void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8);

 private:
  Tape* tape_;
  ParamStore* store_;
  std::unordered_map<std::string, Var> bound_;
};

// Checkpoint archive: "POGC" magic, u32 version, length-prefixed config JSON,
// then named little-endian float32 arrays. Documented in the README.
void save_checkpoint(const std::string& path, const ParamStore& store,
                     const std::string& config_json);
// Returns the config JSON; fills `store`.
std::string load_checkpoint(const std::string& path, ParamStore& store);

}  // namespace pogmv
