//! Oracle-backed checks, one test per criterion.

mod common;

use common::criteria;

fn run(check: criteria::Check) {
    if let Err(e) = check {
        panic!("{e}");
    }
}

#[test]
fn edit_distance_matches_recursive_oracle_on_all_short_pairs() {
    run(criteria::edit_distance_vs_recursive());
}

#[test]
fn relative_reduction_reproduces_published_figures() {
    run(criteria::relative_reduction_figures());
}

#[test]
fn trainable_fraction_reproduces_published_figures() {
    run(criteria::trainable_fraction_figures());
}

#[test]
fn lora_counts_match_enumeration() {
    run(criteria::lora_counts_vs_enumeration());
}

#[test]
fn scaled_lr_reproduces_published_settings() {
    run(criteria::scaled_lr_figures());
}

#[test]
fn schedule_boundaries_are_exact() {
    run(criteria::schedule_boundaries());
}

#[test]
fn analytic_gradients_match_finite_differences() {
    run(criteria::gradient_checks());
}

#[test]
fn prompts_are_byte_exact_and_within_budget() {
    run(criteria::prompt_golden_and_budget());
}

#[test]
fn generation_limits_follow_floor_rule() {
    run(criteria::generation_limits());
}

#[test]
fn keyword_vote_threshold_is_exact() {
    run(criteria::vote_boundaries());
}

#[test]
fn filter_boundaries_are_inclusive() {
    run(criteria::filter_boundaries());
}

#[test]
fn normalization_lowers_error_on_salted_hypotheses() {
    run(criteria::post_processing_direction());
}
