#include "pbody/rng.hpp"

namespace pbody {

namespace {

std::uint64_t splitmix(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t stream_seed(std::uint64_t seed, std::string_view stream, std::uint64_t a, std::uint64_t b)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : stream) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    std::uint64_t x = splitmix(seed ^ splitmix(h));
    x = splitmix(x ^ splitmix(a + 0x632BE59BD9B4E019ull));
    x = splitmix(x ^ splitmix(b + 0x8CB92BA72F3D8DD7ull));
    return x;
}

}  // namespace pbody
