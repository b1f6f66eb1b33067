// Single function fixture: f spans lines 10-20.
#include <cstdint>

// Lines 4-9 are file-scope declarations and comments.
namespace {
constexpr int kLimit = 100;
}  // namespace

/* f below */
int f() {
  std::int64_t acc = 0;
  for (int i = 0; i < kLimit; ++i) {
    acc += i;
  }
  if (acc > 10) {
    acc -= 10;
  }
  int result = static_cast<int>(acc);
  return result;
}
