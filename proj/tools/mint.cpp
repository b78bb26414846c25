#include <cstdio>

int main() {
  std::puts("mint: experiment driver not wired up yet");
  return 2;
}
