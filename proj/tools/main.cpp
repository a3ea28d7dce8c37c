#include <cstdio>
int main() { std::puts("urlbias: cli not wired yet"); return 0; }
