#pragma once

#include "randreg/bandit.hpp"
#include "randreg/domain.hpp"
#include "randreg/error.hpp"
#include "randreg/induced.hpp"
#include "randreg/kernels.hpp"
#include "randreg/losses.hpp"
#include "randreg/models.hpp"
#include "randreg/posterior.hpp"
#include "randreg/random.hpp"
#include "randreg/training.hpp"
#include "randreg/version.hpp"
