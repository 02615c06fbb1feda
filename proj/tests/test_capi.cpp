#include <cubetrack.h>
int main() { return 0; }
