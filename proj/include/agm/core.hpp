#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace agm {

// Error categories map onto CLI exit codes.
enum class ErrorKind {
  invalid_input = 2,
  empty_graph = 3,
  disconnected = 4,
  numeric = 5,
  structural = 6,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }
  int exit_code() const { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

struct Point {
  int x = 0;
  int y = 0;
  friend bool operator==(const Point&, const Point&) = default;
  friend auto operator<=>(const Point&, const Point&) = default;
};

// Row-major ordering used everywhere determinism by coordinate is needed.
inline bool row_major_less(const Point& a, const Point& b) {
  return a.y != b.y ? a.y < b.y : a.x < b.x;
}

inline double sq_dist(const Point& a, const Point& b) {
  double dx = a.x - b.x, dy = a.y - b.y;
  return dx * dx + dy * dy;
}

}  // namespace agm
