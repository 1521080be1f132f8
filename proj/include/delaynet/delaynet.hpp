#pragma once

#include "delaynet/dde.hpp"
#include "delaynet/equivalence.hpp"
#include "delaynet/errors.hpp"
#include "delaynet/graph.hpp"
#include "delaynet/io.hpp"
#include "delaynet/log.hpp"
#include "delaynet/reduce.hpp"
#include "delaynet/system.hpp"
