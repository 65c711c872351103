#include "fdif/numerics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fdif {

using u128 = unsigned __int128;

UInt UInt::from_decimal(const std::string& s) {
  FDIF_REQUIRE(!s.empty(), Error, "empty integer literal");
  u128 v = 0;
  for (char c : s) {
    FDIF_REQUIRE(c >= '0' && c <= '9', Error, "bad digit in integer literal");
    u128 next = v * 10 + u128(c - '0');
    FDIF_REQUIRE(next >= v, OverflowError, "integer literal exceeds 128 bits");
    v = next;
  }
  return UInt(v);
}

std::string UInt::to_decimal() const {
  if (v_ == 0) return "0";
  std::string out;
  u128 v = v_;
  while (v != 0) {
    out.push_back(char('0' + int(v % 10)));
    v /= 10;
  }
  std::reverse(out.begin(), out.end());
  return out;
}

int UInt::bit_length() const {
  uint64_t hi = uint64_t(v_ >> 64);
  if (hi != 0) return 128 - __builtin_clzll(hi);
  uint64_t lo = uint64_t(v_);
  if (lo != 0) return 64 - __builtin_clzll(lo);
  return 0;
}

int bit_distance(UInt x, UInt y) {
  u128 d = x.raw() ^ y.raw();
  return __builtin_popcountll(uint64_t(d)) + __builtin_popcountll(uint64_t(d >> 64));
}

namespace {

// (a * b) % m for any 128-bit modulus. Direct product when both operands fit
// in 64 bits; shift-add reduction otherwise.
u128 mulmod(u128 a, u128 b, u128 m) {
  a %= m;
  b %= m;
  if ((a >> 64) == 0 && (b >> 64) == 0) return (a * b) % m;
  if (a < b) std::swap(a, b);
  u128 r = 0;
  while (b != 0) {
    if (b & 1) {
      r += a;
      if (r >= m) r -= m;
    }
    a <<= 1;
    if (a >= m) a -= m;
    b >>= 1;
  }
  return r;
}

u128 powmod(u128 base, u128 exp, u128 m) {
  u128 r = 1 % m;
  base %= m;
  while (exp != 0) {
    if (exp & 1) r = mulmod(r, base, m);
    base = mulmod(base, base, m);
    exp >>= 1;
  }
  return r;
}

// One Miller-Rabin round; true means "composite for sure".
bool mr_witness(u128 n, u128 d, int s, u128 a) {
  a %= n;
  if (a == 0) return false;
  u128 x = powmod(a, d, n);
  if (x == 1 || x == n - 1) return false;
  for (int i = 1; i < s; ++i) {
    x = mulmod(x, x, n);
    if (x == n - 1) return false;
  }
  return true;
}

// Sufficient witness bound for {2,3,...,37}: 3.317e24.
const u128 kDeterministicBound = (u128(178822ULL) << 64) | u128(9400407930607671136ULL);

u128 gcd128(u128 a, u128 b) {
  while (b != 0) {
    u128 t = a % b;
    a = b;
    b = t;
  }
  return a;
}

}  // namespace

bool is_prime(UInt xu, int rounds, uint64_t seed) {
  u128 x = xu.raw();
  if (x < 2) return false;
  for (u128 p : {u128(2), u128(3), u128(5), u128(7), u128(11), u128(13)}) {
    if (x == p) return true;
    if (x % p == 0) return false;
  }
  u128 d = x - 1;
  int s = 0;
  while ((d & 1) == 0) {
    d >>= 1;
    ++s;
  }
  static constexpr std::array<uint64_t, 12> kWitnesses = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37};
  if (x < kDeterministicBound) {
    for (uint64_t a : kWitnesses) {
      if (mr_witness(x, d, s, a)) return false;
    }
    return true;
  }
  Rng rng(seed, {uint64_t(x), uint64_t(x >> 64)});
  for (int i = 0; i < rounds; ++i) {
    u128 a = 2 + u128(rng.below(uint64_t(std::min<u128>(x - 3, ~uint64_t(0)))));
    if (mr_witness(x, d, s, a)) return false;
  }
  return true;
}

namespace {

// Iteration budget per attempt: 4 * ceil(N^(1/4)).
uint64_t rho_budget(u128 n) {
  long double r = powl((long double)n, 0.25L);
  return 4 * (uint64_t)ceill(r) + 16;
}

// One Brent attempt with fixed polynomial offset c; 0 on failure.
u128 brent_attempt(u128 n, u128 c, u128 x0, uint64_t budget) {
  u128 y = x0, q = 1, g = 1, x = 0, ys = 0;
  const uint64_t batch = 128;
  uint64_t r = 1, iters = 0;
  auto f = [&](u128 v) { return (mulmod(v, v, n) + c) % n; };
  while (g == 1) {
    x = y;
    for (uint64_t i = 0; i < r; ++i) y = f(y);
    for (uint64_t k = 0; k < r && g == 1; k += batch) {
      ys = y;
      uint64_t lim = std::min(batch, r - k);
      for (uint64_t i = 0; i < lim; ++i) {
        y = f(y);
        q = mulmod(q, x > y ? x - y : y - x, n);
      }
      g = gcd128(q, n);
      iters += lim;
      if (iters > budget) return 0;
    }
    r *= 2;
  }
  if (g == n) {
    // Backtrack one step at a time from the saved point.
    do {
      ys = f(ys);
      g = gcd128(x > ys ? x - ys : ys - x, n);
    } while (g == 1);
  }
  return (g == n) ? 0 : g;
}

}  // namespace

std::optional<UInt> pollard_rho(UInt nu, uint64_t seed) {
  u128 n = nu.raw();
  FDIF_REQUIRE(n >= 4, Error, "pollard_rho requires N >= 4");
  if (is_prime(nu)) throw PrimeInputError("pollard_rho: input is prime");
  if ((n & 1) == 0) return UInt(u128(2));
  const uint64_t budget = rho_budget(n);
  Rng rng(seed, {uint64_t(n), uint64_t(n >> 64)});
  for (int attempt = 0; attempt < 64; ++attempt) {
    u128 c = 1 + rng.below(uint64_t(std::min<u128>(n - 1, ~uint64_t(0))));
    u128 x0 = rng.below(uint64_t(std::min<u128>(n, ~uint64_t(0))));
    u128 g = brent_attempt(n, c, x0, budget);
    if (g > 1 && g < n) return UInt(g);
  }
  return std::nullopt;
}

std::vector<UInt> factorize(UInt n, uint64_t seed) {
  std::vector<UInt> out;
  if (n <= 1) return out;
  std::vector<UInt> stack = {n};
  while (!stack.empty()) {
    UInt v = stack.back();
    stack.pop_back();
    if (v == 1) continue;
    if (is_prime(v)) {
      out.push_back(v);
      continue;
    }
    std::optional<UInt> d;
    for (uint64_t s = seed; !d; ++s) d = pollard_rho(v, s);
    stack.push_back(*d);
    stack.push_back(v / *d);
  }
  std::sort(out.begin(), out.end());
  return out;
}

FactorPair gen_training_pair(int n, Rng& rng) {
  FDIF_REQUIRE(n >= 4 && n % 2 == 0, Error, "gen_training_pair: n must be even and >= 4");
  const int half = n / 2;
  auto draw = [&]() {
    UInt v = 1;  // lowest bit forced: odd numbers only
    for (int i = 1; i < half; ++i) {
      if (rng.coin()) v = v.with_bit(i);
    }
    return v;
  };
  FactorPair p;
  p.n = n;
  p.a = draw();
  p.b = draw();
  p.ab = p.a * p.b;
  return p;
}

FactorPair training_pair_at(uint64_t seed, int n, uint64_t index) {
  Rng rng(seed, {0x7261696eULL, uint64_t(n), index});
  return gen_training_pair(n, rng);
}

FactorPair gen_test_pair(int n, const UIntSet& excluded, Rng& rng) {
  FDIF_REQUIRE(n >= 8 && n % 2 == 0, Error, "gen_test_pair: n must be even and >= 8");
  const int half = n / 2;
  // Bit-length in {half-1, half} <=> value in [2^(half-2), 2^half).
  const uint64_t lo = uint64_t(1) << (half - 2);
  const uint64_t span = (uint64_t(1) << half) - lo;
  const int max_draws = 20000 + 2000 * n;
  for (int tries = 0; tries < max_draws; ++tries) {
    UInt a = UInt((lo + rng.below(span)) | 1);
    if (!is_prime(a) || excluded.count(a)) continue;
    UInt b = UInt((lo + rng.below(span)) | 1);
    if (!is_prime(b) || excluded.count(b)) continue;
    FactorPair p{a, b, n, a * b};
    if (p.ab.bit_length() > n) continue;  // reject and redraw
    return p;
  }
  throw ExhaustedRetriesError("gen_test_pair: no admissible prime pair found");
}

std::string DatasetManifest::to_json() const {
  nlohmann::json j;
  j["version"] = version;
  j["n_list"] = n_list;
  j["counts"] = counts;
  j["seed"] = seed;
  if (prime_list) {
    std::vector<std::string> ps;
    ps.reserve(prime_list->size());
    for (const UInt& p : *prime_list) ps.push_back(p.to_decimal());
    j["prime_list"] = ps;
  }
  return j.dump(2);
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  DatasetManifest m;
  m.version = j.at("version").get<int>();
  m.n_list = j.at("n_list").get<std::vector<int>>();
  m.counts = j.at("counts").get<std::vector<int64_t>>();
  m.seed = j.at("seed").get<uint64_t>();
  if (j.contains("prime_list")) {
    std::vector<UInt> ps;
    for (const auto& s : j.at("prime_list")) ps.push_back(UInt::from_decimal(s.get<std::string>()));
    m.prime_list = std::move(ps);
  }
  FDIF_REQUIRE(m.n_list.size() == m.counts.size(), Error, "manifest: n_list/counts length mismatch");
  return m;
}

void DatasetManifest::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  FDIF_REQUIRE(f.good(), Error, "manifest: cannot open for write: " + path);
  f << to_json() << "\n";
}

DatasetManifest DatasetManifest::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  FDIF_REQUIRE(f.good(), Error, "manifest: cannot open: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_json(ss.str());
}

UIntSet training_multiplicands(const DatasetManifest& m) {
  FDIF_REQUIRE(!m.is_test(), Error, "training_multiplicands needs a training manifest");
  UIntSet out;
  for (size_t i = 0; i < m.n_list.size(); ++i) {
    for (int64_t k = 0; k < m.counts[i]; ++k) {
      FactorPair p = training_pair_at(m.seed, m.n_list[i], uint64_t(k));
      out.insert(p.a);
      out.insert(p.b);
    }
  }
  return out;
}

std::pair<std::vector<FactorPair>, DatasetManifest> gen_test_set(
    const std::vector<int>& n_list, const std::vector<int64_t>& counts, uint64_t seed,
    const UIntSet& excluded) {
  FDIF_REQUIRE(n_list.size() == counts.size(), Error, "gen_test_set: n_list/counts mismatch");
  std::vector<FactorPair> pairs;
  std::vector<UInt> primes;
  for (size_t i = 0; i < n_list.size(); ++i) {
    for (int64_t k = 0; k < counts[i]; ++k) {
      Rng rng(seed, {0x74657374ULL, uint64_t(n_list[i]), uint64_t(k)});
      FactorPair p = gen_test_pair(n_list[i], excluded, rng);
      primes.push_back(p.a);
      primes.push_back(p.b);
      pairs.push_back(p);
    }
  }
  DatasetManifest m;
  m.n_list = n_list;
  m.counts = counts;
  m.seed = seed;
  m.prime_list = std::move(primes);
  return {std::move(pairs), std::move(m)};
}

std::vector<FactorPair> test_pairs_from_manifest(const DatasetManifest& m) {
  FDIF_REQUIRE(m.is_test(), Error, "test_pairs_from_manifest needs a test manifest");
  const auto& ps = *m.prime_list;
  std::vector<FactorPair> out;
  size_t idx = 0;
  for (size_t i = 0; i < m.n_list.size(); ++i) {
    for (int64_t k = 0; k < m.counts[i]; ++k) {
      FDIF_REQUIRE(idx + 2 <= ps.size(), TruncatedFileError,
                   "manifest prime_list shorter than counts imply");
      FactorPair p{ps[idx], ps[idx + 1], m.n_list[i], ps[idx] * ps[idx + 1]};
      idx += 2;
      out.push_back(p);
    }
  }
  return out;
}

bool manifests_disjoint(const DatasetManifest& test, const DatasetManifest& train) {
  UIntSet mult = training_multiplicands(train);
  for (const UInt& p : *test.prime_list) {
    if (mult.count(p)) return false;
  }
  return true;
}

}  // namespace fdif
