#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ainet {

using Shape = std::vector<int64_t>;

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void check(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

inline int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Strict mode pins single-threaded, fixed-order evaluation. The library is
// already sequential and deterministic; the flag exists so callers can assert
// the contract and so the CLI can honor --strict / AINET_STRICT=1.
struct StrictMode {
    static bool& flag() {
        static bool v = true;
        return v;
    }
    static bool enabled() { return flag(); }
    static void set(bool v) { flag() = v; }
};

// Multiply-add accounting used by the complexity benchmark. Kernels bump the
// counter with the same closed-form expressions the analytic model sums, so
// "analytic == instrumented" checks that the model lists exactly the ops the
// real path executes. Disabled by default (zero overhead beyond a branch).
struct CostCounter {
    static bool& enabled() {
        static bool v = false;
        return v;
    }
    static long long& count() {
        static long long v = 0;
        return v;
    }
    static void bump(long long n) {
        if (enabled()) count() += n;
    }
    static void reset() { count() = 0; }
};

// Always-on structural counter: one bump of B*L*D*N per selective_scan call.
// Used to assert the Theta(N*L) work scaling of the scan path.
struct ScanStats {
    static long long& state_updates() {
        static long long v = 0;
        return v;
    }
    static void reset() { state_updates() = 0; }
};

}  // namespace ainet
