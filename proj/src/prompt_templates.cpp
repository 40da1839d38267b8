#include "rsseg/prompting.hpp"

namespace rsseg::prompting {

// The two generation templates are fixed text assets; rendering substitutes
// the {slots} and resolves the inline conditionals but never alters the
// surrounding text.

namespace {

const std::string kStage1Body =
    R"TPL(The size of the original image is (512,512).
This original image, where the image's origin is at the top left corner, contains the following objects: {classes_list_str}.
Only focus on {class_name} in the image.
If {class_name} contains the word 'Other', remove the word 'Other' and use only the second word in {class_name} describing the class. In that case, make sure that second word in {class_name} starts with a lowercase letter.
The following are the bounding boxes [x, y, width, height] of objects of class {class_name}, where (x,y) represents the top left corner of the bounding box, and 'width' represents the bounding box's width, and 'height' represents the bounding box's height.
The bounding box of the {class_name} is at coordinates {bbox}.
Find visual features (color, shape, size, etc.) that can help find or segment {class_name} in the image.
Generate a sentence (not a question) that can uniquely segment or identify or find or locate {class_name} in this image, be concise and clear.)TPL";

const std::string kStage2Body =
    R"TPL(The size of the original image is (512,512).
Only focus on {class_name} in the image.
In the original image, where the image's origin is at the top left corner, the object is a {class_name} located at bounding box coordinates {bbox}.
The following are the bounding boxes [x, y, width, height] of objects of class {class_name}, where (x,y) represents the top left corner of the bounding box, and 'width' represents the bounding box's width, and 'height' represents the bounding box's height:
This original image, where the image's origin is at the top left corner, contains the following objects: {classes_list_str}.
If {class_name} contains the word 'Other', remove the word 'Other' and use only the second word in {class_name} describing the class. In that case, make sure that second word in {class_name} starts with a lowercase letter.
{ ' located at bounding box coordinates {bbox}.' if include_bbox else '.'}
Please generate a query that would help locate this {class_name} in the original image.
Your query will be the question to the answer provided by {unique_characteristics.query}.
For example, if the value contained in {unique_characteristics.query} is 'Look for a long rectangular shape with distinct wheels, typically metallic or painted in color, connected to a truck cab at the front', your query should be:
'Segment the blue car in the bottom right of the image with a long rectangular shape with distinct wheels, typically metallic or painted in color, connected to a truck cab at the front'
'Identify the blue car in the bottom right of the image with a long rectangular shape with distinct wheels, typically metallic or painted in color, connected to a truck cab at the front'
'Find the blue car in the bottom right of the image with a long rectangular shape with distinct wheels, typically metallic or painted in color, connected to a truck cab at the front'
'Locate the blue car in the bottom right of the image with a long rectangular shape with distinct wheels, typically metallic or painted in color, connected to a truck cab at the front'
'Show the blue car in the bottom right of the image with a long rectangular shape with distinct wheels, typically metallic or painted in color, connected to a truck cab at the front'.
Generate the query considering the sentence: {unique_characteristics.query}
{ 'and the location described by the bounding box.' if include_bbox else '.'}
Make sure to vary the start of your queries with key words such as 'Segment, Find, Locate, Show, Identify' and similar synonyms. Do not overuse one over the others.
Rephrase the generated query to make it sound better.
{ 'Do not mention or use any location-related info such as: top, near the center in your query.' if not include_bbox else ''}
Do not output the exact bounding box coordinates, instead, output the locations such as: bottom-left, top-right, top-left, bottom-right, center, etc.
The response to the generated queries should be a JSON object in the following format and contain nothing else:
The response to the generated query should be a sentence, not a question.
Be concise and clear, start the sentence with: Locate, Segment, or Identify.
{"query": "<your_query_here>"})TPL";

const std::string kRephraseBody =
    R"TPL(You are rewording a localization query for a satellite image.
Original query: "{principal}"
Write one alternative phrasing (variant {variant}) of the original query.
Keep the same target object and its class unchanged. Keep any spatial qualifiers exactly as given and do not add new location information.
The response should be a JSON object in the following format and contain nothing else:
{"query": "<your_query_here>"})TPL";

}  // namespace

const std::string& template_body(Stage stage) {
    switch (stage) {
        case Stage::Stage1: return kStage1Body;
        case Stage::Stage2: return kStage2Body;
        case Stage::Rephrase: return kRephraseBody;
    }
    return kStage1Body;
}

}  // namespace rsseg::prompting
