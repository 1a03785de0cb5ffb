#pragma once

#include <cstdint>

namespace thrifty {

// Counts multiply-accumulates executed by conv2d and linear while installed.
// Installing a tally switches those kernels onto a scalar path that increments
// the counter once per multiply-accumulate actually performed.
class ScopedMacTally {
 public:
  ScopedMacTally();
  ~ScopedMacTally();
  ScopedMacTally(const ScopedMacTally&) = delete;
  ScopedMacTally& operator=(const ScopedMacTally&) = delete;

  std::uint64_t count() const { return count_; }

  static ScopedMacTally* active();
  void add(std::uint64_t n) { count_ += n; }

 private:
  std::uint64_t count_ = 0;
  ScopedMacTally* previous_;
};

// Folds every data-dependent branch taken by non-smooth ops (ReLU sign,
// pooling argmax) into a running hash. Two forward passes with the same
// fingerprint evaluated the same smooth piece of the network.
class ScopedBranchTrace {
 public:
  ScopedBranchTrace();
  ~ScopedBranchTrace();
  ScopedBranchTrace(const ScopedBranchTrace&) = delete;
  ScopedBranchTrace& operator=(const ScopedBranchTrace&) = delete;

  std::uint64_t fingerprint() const { return hash_; }

  static ScopedBranchTrace* active();
  void record(std::uint64_t decision) {
    hash_ ^= decision + 0x9e3779b97f4a7c15ULL + (hash_ << 6) + (hash_ >> 2);
  }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
  ScopedBranchTrace* previous_;
};

}  // namespace thrifty
