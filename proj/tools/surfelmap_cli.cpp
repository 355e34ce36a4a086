#include <cstdio>

int main() {
  std::puts("surfelmap_cli: placeholder");
  return 0;
}
