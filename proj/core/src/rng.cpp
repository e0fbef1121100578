#include "ectlab/rng.hpp"

#include <sstream>

#include "ectlab/error.hpp"

namespace ectlab {

std::string Rng::state() const {
    std::ostringstream os;
    os << engine_ << ' ' << normal_;
    return os.str();
}

void Rng::set_state(const std::string& state) {
    std::istringstream is(state);
    is >> engine_ >> normal_;
    if (is.fail()) throw ArgumentError("malformed RNG state");
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    std::uint64_t h = splitmix(seed);
    h = splitmix(h ^ a);
    h = splitmix(h ^ (b + 0x632be59bd9b4e019ULL));
    return splitmix(h ^ (c + 0x8cb92ba72f3d8dd7ULL));
}

}  // namespace ectlab
