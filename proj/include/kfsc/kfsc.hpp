#ifndef KFSC_KFSC_HPP
#define KFSC_KFSC_HPP

#include "kfsc/core.hpp"
#include "kfsc/eval.hpp"
#include "kfsc/init.hpp"
#include "kfsc/io.hpp"
#include "kfsc/rng.hpp"
#include "kfsc/solver.hpp"
#include "kfsc/synth.hpp"
#include "kfsc/types.hpp"
#include "kfsc/variants.hpp"

#endif  // KFSC_KFSC_HPP
