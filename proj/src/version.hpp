#pragma once

namespace argus {
const char* version();
}  // namespace argus
