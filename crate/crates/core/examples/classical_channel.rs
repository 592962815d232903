//! Sends framed messages over loopback and TCP transports, then survives a
//! forced disconnect through session resume.

use std::time::Duration;

use qkdlink::harness::socket_pair;
use qkdlink::netlink::{loopback_pair, Channel, FaultyTransport, LoopbackHub, Message, MsgType, Transport};

fn exchange(a: &Channel, b: &Channel) -> qkdlink::Result<()> {
    for block in 0..3 {
        a.send_message(&Message::PaSeed { block, seed: 1000 + block, key_len: 4096, out_len: 1024 })?;
        let m = b.recv_message(Duration::from_secs(1))?;
        println!("  received {m:?}");
    }
    Ok(())
}

fn main() -> qkdlink::Result<()> {
    println!("loopback:");
    let (x, y) = loopback_pair();
    let (a, b) = (Channel::new(7, Box::new(x)), Channel::new(7, Box::new(y)));
    exchange(&a, &b)?;
    println!("  {} bytes up", a.stats().bytes_up);

    println!("tcp:");
    let (x, y) = socket_pair()?;
    exchange(&Channel::new(8, Box::new(x)), &Channel::new(8, Box::new(y)))?;

    println!("disconnect after two frames, then resume:");
    let hub = LoopbackHub::new();
    let h1 = hub.clone();
    let h2 = hub.clone();
    let a = Channel::new(9, Box::new(FaultyTransport::new(hub.connect(0), 2)))
        .with_connector(Box::new(move || Ok(Box::new(h1.connect(0)) as Box<dyn Transport>)));
    let b = Channel::new(9, Box::new(hub.connect(1))).with_connector(Box::new(move || Ok(Box::new(h2.connect(1)) as Box<dyn Transport>)));
    let sender = std::thread::spawn(move || -> qkdlink::Result<u64> {
        for block in 0..5 {
            a.send_message(&Message::PaSeed { block, seed: block, key_len: 4096, out_len: 1024 })?;
        }
        Ok(a.stats().resumes)
    });
    for _ in 0..5 {
        let f = b.recv(Duration::from_secs(5))?;
        assert_eq!(f.msg_type, MsgType::PaSeed);
    }
    let resumes = sender.join().expect("sender thread")?;
    println!("  all frames delivered in order, {resumes} resume(s)");
    Ok(())
}
