use reaction_forge::motion::{InteractionPair, MotionSequence};
use reaction_forge::render::{render_frames, svg_frame, View};
use reaction_forge_sim::{CharacterSpec, CharacterState};

fn seq(states: Vec<CharacterState>) -> MotionSequence {
    MotionSequence {
        fps: 30.0,
        family: "test".into(),
        states,
    }
}

#[test]
fn rest_pose_frame_matches_golden() {
    let spec = CharacterSpec::humanoid();
    let a = CharacterState::rest(&spec, [-0.5, 0.96]);
    let r = CharacterState::rest(&spec, [0.5, 0.96]);
    let view = View::fit(&spec, &[(&a, &r)]);
    let golden = include_str!("golden/rest_pair.svg");
    assert_eq!(svg_frame(&spec, &a, &r, &view), golden);
}

#[test]
fn one_file_per_frame() {
    let spec = CharacterSpec::humanoid();
    let frames: Vec<_> = (0..7).map(|t| CharacterState::rest(&spec, [0.1 * t as f64, 1.0])).collect();
    let other: Vec<_> = (0..7).map(|_| CharacterState::rest(&spec, [2.0, 1.0])).collect();
    let pair = InteractionPair::new(0, seq(frames), seq(other)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(render_frames(&spec, &pair, dir.path()).unwrap(), 7);
    let mut names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names.first().unwrap(), "frame_00000.svg");
    assert_eq!(names.last().unwrap(), "frame_00006.svg");
    assert_eq!(names.len(), 7);
    // one shared view: every frame has the same header line
    let heads: Vec<String> = names
        .iter()
        .map(|n| std::fs::read_to_string(dir.path().join(n)).unwrap().lines().next().unwrap().to_string())
        .collect();
    assert!(heads.iter().all(|h| h == &heads[0]));
}

#[test]
fn empty_motion_writes_nothing() {
    let spec = CharacterSpec::humanoid();
    let pair = InteractionPair::new(0, seq(vec![]), seq(vec![])).unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(render_frames(&spec, &pair, dir.path().join("out")).unwrap(), 0);
    assert_eq!(std::fs::read_dir(dir.path().join("out")).unwrap().count(), 0);
}
