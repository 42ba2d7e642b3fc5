#pragma once

#include "qcarleman/carleman.hpp"
#include "qcarleman/diagnostics.hpp"
#include "qcarleman/dual.hpp"
#include "qcarleman/errors.hpp"
#include "qcarleman/io.hpp"
#include "qcarleman/net.hpp"
#include "qcarleman/polyfield.hpp"
#include "qcarleman/sparsetrain.hpp"

namespace qcarleman {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace qcarleman
