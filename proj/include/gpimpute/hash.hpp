#ifndef GPIMPUTE_HASH_HPP
#define GPIMPUTE_HASH_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace gpimpute {

// 64-bit FNV-1a, fed incrementally.
class Fnv1a {
 public:
  Fnv1a& bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 1099511628211ull;
    }
    return *this;
  }
  Fnv1a& text(std::string_view s) { return bytes(s.data(), s.size()); }
  template <typename T>
  Fnv1a& pod(const T& v) {
    return bytes(&v, sizeof(T));
  }
  template <typename Derived>
  Fnv1a& matrix(const Eigen::DenseBase<Derived>& m) {
    pod(static_cast<std::int64_t>(m.rows()));
    pod(static_cast<std::int64_t>(m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) pod(m(i, j));
    return *this;
  }
  std::uint64_t value() const { return state_; }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
    return buf;
  }

 private:
  std::uint64_t state_ = 14695981039346656037ull;
};

}  // namespace gpimpute

#endif  // GPIMPUTE_HASH_HPP
