//! Shared server-sent-events plumbing for the HTTP adapters.

use std::collections::VecDeque;

use eventsource_stream::Eventsource;
use futures::stream::{self, BoxStream, StreamExt};

use super::Emission;

/// Turns provider SSE events into emissions.
pub(crate) trait SseParser: Send + 'static {
    fn on_event(&mut self, event: &str, data: &str) -> Vec<Emission>;
    /// Called when the event stream ends. Must produce a terminal emission
    /// unless one was already produced.
    fn finish(&mut self) -> Vec<Emission>;
}

struct State<P> {
    events: BoxStream<'static, Result<(String, String), String>>,
    parser: P,
    out: VecDeque<Emission>,
    exhausted: bool,
    terminated: bool,
}

/// Sends `request` and parses the SSE response body with `parser`.
/// The returned stream ends right after the first terminal emission.
pub(crate) fn drive<P: SseParser>(request: reqwest::RequestBuilder, parser: P) -> BoxStream<'static, Emission> {
    let start = async move {
        let resp = request
            .send()
            .await
            .map_err(|e| format!("transport error: {e}"))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().await.unwrap_or_default();
            return Err(format!("provider returned {status}: {body}"));
        }
        Ok(resp
            .bytes_stream()
            .eventsource()
            .map(|r| r.map(|e| (e.event, e.data)).map_err(|e| e.to_string()))
            .boxed())
    };
    let mut parser = Some(parser);
    stream::once(start)
        .flat_map(move |res| match res {
            Err(message) => stream::iter([Emission::Error(message)]).boxed(),
            Ok(events) => parse_events(events, parser.take().expect("single response")),
        })
        .boxed()
}

pub(crate) fn parse_events<P: SseParser>(
    events: BoxStream<'static, Result<(String, String), String>>,
    parser: P,
) -> BoxStream<'static, Emission> {
    let state = State {
        events,
        parser,
        out: VecDeque::new(),
        exhausted: false,
        terminated: false,
    };
    stream::unfold(state, |mut s| async move {
        loop {
            if s.terminated {
                return None;
            }
            if let Some(e) = s.out.pop_front() {
                if e.is_terminal() {
                    s.terminated = true;
                }
                return Some((e, s));
            }
            if s.exhausted {
                return None;
            }
            match s.events.next().await {
                Some(Ok((event, data))) => {
                    let out = s.parser.on_event(&event, &data);
                    s.out.extend(out);
                }
                Some(Err(m)) => s.out.push_back(Emission::Error(format!("stream error: {m}"))),
                None => {
                    s.exhausted = true;
                    let out = s.parser.finish();
                    s.out.extend(out);
                }
            }
        }
    })
    .boxed()
}
