// Fixture for function span detection. Spans are asserted in tests.
#include <vector>
#include <string>

namespace geo {

static const int kTable[] = {1, 2, 3};

int f() {
  int total = 0;
  for (int i = 0; i < 10; ++i) {
    if (i % 2 == 0) {
      total += i;
    } else {
      total -= 1;
    }
  }
  auto add = [&](int x) { total += x; };
  add(kTable[0]);
  return total;
}

class Shape {
 public:
  explicit Shape(int sides) : sides_(sides), name_{"shape"} {
    cache_.reserve(4);
  }

  int sides() const noexcept { return sides_; }

  bool operator==(const Shape& other) const {
    return sides_ == other.sides_;
  }

 private:
  int sides_;
  std::string name_;
  std::vector<int> cache_;
};

template <typename T>
auto scaled(const std::vector<T>& v, T k) -> std::vector<T> {
  std::vector<T> out;
  /* braces in comments { are ignored */
  const char* s = "and in strings {";
  (void)s;
  for (const T& x : v) out.push_back(x * k);
  return out;
}

}  // namespace geo
