#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "fdif/common.hpp"
#include "fdif/rng.hpp"

namespace fdif {

// Unsigned integer with 128-bit headroom. Factoring targets here top out at
// 56 bits; both halves of a product stay below 2^64, so schoolbook products
// of factor pairs never wrap.
using uint128_t = unsigned __int128;

class UInt {
 public:
  constexpr UInt(uint128_t v = 0) : v_(v) {}  // NOLINT: implicit by design

  static UInt from_decimal(const std::string& s);
  std::string to_decimal() const;

  constexpr uint128_t raw() const { return v_; }
  constexpr uint64_t low64() const { return uint64_t(v_); }

  constexpr bool bit(int i) const { return ((v_ >> i) & 1) != 0; }
  constexpr UInt with_bit(int i) const { return UInt(v_ | (uint128_t(1) << i)); }
  int bit_length() const;
  constexpr bool is_odd() const { return (v_ & 1) != 0; }
  constexpr bool is_zero() const { return v_ == 0; }

  friend constexpr UInt operator+(UInt a, UInt b) { return UInt(a.v_ + b.v_); }
  friend constexpr UInt operator-(UInt a, UInt b) { return UInt(a.v_ - b.v_); }
  friend constexpr UInt operator*(UInt a, UInt b) { return UInt(a.v_ * b.v_); }
  friend constexpr UInt operator/(UInt a, UInt b) { return UInt(a.v_ / b.v_); }
  friend constexpr UInt operator%(UInt a, UInt b) { return UInt(a.v_ % b.v_); }
  friend constexpr UInt operator^(UInt a, UInt b) { return UInt(a.v_ ^ b.v_); }
  friend constexpr UInt operator>>(UInt a, int s) { return UInt(a.v_ >> s); }
  friend constexpr UInt operator<<(UInt a, int s) { return UInt(a.v_ << s); }
  friend constexpr bool operator==(UInt a, UInt b) { return a.v_ == b.v_; }
  friend constexpr bool operator!=(UInt a, UInt b) { return a.v_ != b.v_; }
  friend constexpr bool operator<(UInt a, UInt b) { return a.v_ < b.v_; }
  friend constexpr bool operator<=(UInt a, UInt b) { return a.v_ <= b.v_; }
  friend constexpr bool operator>(UInt a, UInt b) { return a.v_ > b.v_; }
  friend constexpr bool operator>=(UInt a, UInt b) { return a.v_ >= b.v_; }

 private:
  uint128_t v_;
};

struct UIntHash {
  size_t operator()(const UInt& x) const {
    uint64_t s = uint64_t(x.raw()) ^ (uint64_t(x.raw() >> 64) * 0x9e3779b97f4a7c15ULL);
    return size_t(splitmix64(s));
  }
};

using UIntSet = std::unordered_set<UInt, UIntHash>;

// Ground-truth factor pair: two odd n/2-bit numbers and their exact product.
struct FactorPair {
  UInt a;
  UInt b;
  int n = 0;  // total bit budget; a and b each fit in n/2 bits
  UInt ab;

  bool valid() const {
    return n >= 4 && n % 2 == 0 && a.is_odd() && b.is_odd() && a.bit_length() <= n / 2 &&
           b.bit_length() <= n / 2 && a * b == ab && ab.bit_length() <= n;
  }
};

// Miller-Rabin. Deterministic below the published bound for the first twelve
// prime witnesses (3.3e24 > anything this library factors); probabilistic
// with `rounds` random witnesses above it.
bool is_prime(UInt x, int rounds = 16, uint64_t seed = 0x5eed);

// Brent-cycle Pollard rho with polynomial x^2 + c. Re-draws c internally on
// failed attempts, each capped at 4 * ceil(N^(1/4)) iterations. Returns a
// nontrivial divisor, or nullopt when every attempt stalled.
// Throws PrimeInputError when N is prime.
std::optional<UInt> pollard_rho(UInt n, uint64_t seed = 1);

// Full factorization via recursive pollard_rho + is_prime. Sorted ascending,
// with multiplicity. Oracle/baseline path only; the diffusion path never
// calls this.
std::vector<UInt> factorize(UInt n, uint64_t seed = 1);

// Training example: both halves odd with the remaining n/2-1 bits i.i.d.
// uniform, product exact.
FactorPair gen_training_pair(int n, Rng& rng);

// Canonical (seed, n, index) -> FactorPair dataset stream. Pure function;
// manifests regenerate the multiplicand set from it.
FactorPair training_pair_at(uint64_t seed, int n, uint64_t index);

// Test example: both halves prime with bit-length in {n/2-1, n/2}, neither
// in `excluded`, product within n bits. Throws ExhaustedRetriesError when no
// admissible pair turns up within the retry budget.
FactorPair gen_test_pair(int n, const UIntSet& excluded, Rng& rng);

// Hamming distance of binary representations, zero-extended to the longer.
int bit_distance(UInt x, UInt y);

// Serializable description of a generated dataset. Training manifests store
// only (seed, counts); the multiplicand set regenerates lazily. Test
// manifests additionally pin the drawn primes as a flat [a0,b0,a1,b1,...]
// list, segmented per n in n_list order.
struct DatasetManifest {
  int version = 1;
  std::vector<int> n_list;
  std::vector<int64_t> counts;  // parallel to n_list
  uint64_t seed = 0;
  std::optional<std::vector<UInt>> prime_list;

  bool is_test() const { return prime_list.has_value(); }
  std::string to_json() const;
  static DatasetManifest from_json(const std::string& text);
  void save(const std::string& path) const;
  static DatasetManifest load(const std::string& path);
};

// Every a and b the training stream would emit for this manifest.
UIntSet training_multiplicands(const DatasetManifest& m);

// Draws a full test set honoring `excluded` and returns it with its manifest.
std::pair<std::vector<FactorPair>, DatasetManifest> gen_test_set(
    const std::vector<int>& n_list, const std::vector<int64_t>& counts, uint64_t seed,
    const UIntSet& excluded);

// Reconstructs the pairs pinned by a test manifest.
std::vector<FactorPair> test_pairs_from_manifest(const DatasetManifest& m);

// True when no prime of the test manifest appears among the training
// manifest's multiplicands.
bool manifests_disjoint(const DatasetManifest& test, const DatasetManifest& train);

}  // namespace fdif
