#include "version.hpp"

namespace argus {
const char* version() { return "0.1.0"; }
}  // namespace argus
