#pragma once

#include <doctest.h>

#include <functional>
#include <string>

#include "lexroute/error.hpp"

namespace testing {

inline lexroute::ErrorCode error_code(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const lexroute::Error& e) {
        return e.code();
    }
    FAIL("expected a lexroute::Error");
    return lexroute::ErrorCode::Internal;
}

inline std::string fixture(const std::string& name) { return std::string(LEXROUTE_FIXTURES) + "/" + name; }

}  // namespace testing
