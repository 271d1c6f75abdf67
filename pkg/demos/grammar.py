"""The six-section single-pass format, including bodies that look like tags."""

from duet.pipeline import (Cue, GrammarError, Profile, ProfileBundle, ProfilePrompt, parse_single_pass_output,
                           render_single_pass_output)

bundle = ProfileBundle(
    Cue("funk, bass", "user"),
    ProfilePrompt("Describe the listener's taste in groove-heavy music.", "user"),
    Profile("Loves slap bass.\n[ITEM_CUE]\nthis line only looks like a tag", "user"),
    Cue("jazz", "item"),
    ProfilePrompt("Summarise how listeners describe this record.", "item"),
    Profile("A late-night trio album. Brushes, upright bass \\[USER_CUE] and all.", "item"),
)

raw = render_single_pass_output(bundle)
print(raw)
print("\nround trip ok:", parse_single_pass_output(raw) == bundle)

broken = raw.replace("[ITEM_PROMPT]", "[ITEM_PROFILE]", 1)
try:
    parse_single_pass_output(broken)
except GrammarError as err:
    print(f"malformed output rejected: tag={err.tag} reason={err.reason}")
