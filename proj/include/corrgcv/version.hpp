#pragma once

namespace corrgcv {

inline constexpr const char* version = "1.0.0";

}  // end of namespace corrgcv ------------------------------------------------
