#include "p2dnet/parallel.hpp"

#include <cstdlib>
#include <string>

namespace p2dnet {

int default_workers() {
    const char* env = std::getenv("P2DNET_THREADS");
    if (!env || !*env) return 1;
    try {
        const int n = std::stoi(env);
        return n >= 1 ? n : 1;
    } catch (...) {
        return 1;
    }
}

} // namespace p2dnet
