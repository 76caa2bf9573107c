#include "hairseg/tensor.hpp"

#include <sstream>

namespace hairseg {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Param: return "param";
    case ErrorKind::Data: return "data";
    case ErrorKind::Io: return "io";
    case ErrorKind::VersionMismatch: return "version-mismatch";
    case ErrorKind::ConfigMismatch: return "config-mismatch";
    case ErrorKind::Corrupt: return "corrupt";
    case ErrorKind::Contract: return "contract";
    case ErrorKind::Usage: return "usage";
    }
    return "unknown";
}

} // namespace hairseg
