#include <gtest/gtest.h>

#include "popgrid/runtime.hpp"

int main(int argc, char** argv) {
    popgrid::configure_allocator();
    ::testing::InitGoogleTest(&argc, argv);
    return RUN_ALL_TESTS();
}
